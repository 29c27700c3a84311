use std::time::Instant;
use triggerbench::bench::evaluate;
use triggerbench::data::{gen_dataset, stamp_eval_set, DatasetSpec, TriggerSpec};
use triggerbench::nn::{self, ModelSpec};
use triggerbench::train::{implant_backdoor, train, Schedule, TrainConfig};

fn main() {
    let data = gen_dataset(&DatasetSpec::desk_default(0)).unwrap();
    let model = ModelSpec::desk_cnn(10, 1);
    let w0 = nn::init(&model).unwrap();
    let pre = train(&w0, &model, &data.train, &TrainConfig::pretrain_default(5, 2)).unwrap();
    let theta_pre = pre.weights;
    let test_clean = &data.test;
    println!(
        "pretrain: last train acc {:.3}",
        pre.history.last().unwrap().train_accuracy
    );
    let pre_eval_trig = stamp_eval_set(test_clean, &TriggerSpec::blended(0, 100), 11).unwrap();
    let pre_eval = evaluate(&theta_pre, &model, test_clean, &pre_eval_trig, 0).unwrap();
    println!("pretrain test CA {:.3}", pre_eval.ca);

    let target = 0u16;
    let triggers = vec![
        ("badnet", TriggerSpec::badnet(target, 100)),
        ("blended", TriggerSpec::blended(target, 100)),
        ("wanet", TriggerSpec::wanet(target, 32, 100)),
        ("sig", TriggerSpec::sig(target)),
    ];
    for (epochs, lr, sched) in [
        (4usize, 3e-4f64, "cos"),
        (6, 6e-4, "const"),
        (8, 6e-4, "const"),
        (6, 1e-3, "const"),
    ] {
        println!("--- implant epochs {epochs} lr {lr} {sched}");
        for (name, trig) in &triggers {
            let t = Instant::now();
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                schedule: if sched == "cos" {
                    Schedule::CosineWarmup { warmup_steps: 0 }
                } else {
                    Schedule::Constant
                },
                ..TrainConfig::finetune_default(epochs, 3)
            };
            let run = implant_backdoor(&theta_pre, &model, &data.train, trig, 0.03, 7, &cfg).unwrap();
            let test_trig = stamp_eval_set(test_clean, trig, 11).unwrap();
            let ev = evaluate(&run.weights, &model, test_clean, &test_trig, target).unwrap();
            println!(
                "  {name:8} CA {:.3} ASR {:.3}  [{:.1}s]",
                ev.ca,
                ev.asr,
                t.elapsed().as_secs_f64()
            );
        }
    }
}
