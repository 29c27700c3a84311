use std::time::Instant;
use triggerbench::bench::{clean_accuracy, evaluate};
use triggerbench::data::{gen_dataset, stamp_eval_set, DatasetSpec, TriggerSpec};
use triggerbench::nn::{self, ModelSpec};
use triggerbench::train::{implant_backdoor, train, OptimParams, Schedule, TrainConfig};

fn main() {
    let target = 0u16;
    let task = gen_dataset(&DatasetSpec::desk_default(0)).unwrap();
    // Pretraining task: same label space, differently-seeded rendering.
    let pre_data = gen_dataset(&DatasetSpec::desk_default(0 ^ 0x9e37)).unwrap();
    let model = ModelSpec::desk_cnn(10, 1);
    let w0 = nn::init(&model).unwrap();
    let pre = train(&w0, &model, &pre_data.train, &TrainConfig::pretrain_default(5, 2)).unwrap();
    let theta_pre = pre.weights;
    println!(
        "pretrain on its own test: {:.3}; zero-shot on task test: {:.3}",
        clean_accuracy(&theta_pre, &model, &pre_data.test).unwrap(),
        clean_accuracy(&theta_pre, &model, &task.test).unwrap(),
    );

    let triggers = vec![
        ("badnet", TriggerSpec::badnet(target, 100)),
        ("blended", TriggerSpec::blended(target, 100)),
        ("wanet", TriggerSpec::wanet(target, 32, 100)),
        ("sig", TriggerSpec::sig(target)),
    ];
    for (epochs, lr, wd) in [(4usize, 6e-4f64, 0.0f64), (6, 6e-4, 0.0), (6, 6e-4, 0.01)] {
        println!("--- implant ep {epochs} lr {lr} wd {wd}");
        for (name, trig) in &triggers {
            let t = Instant::now();
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                schedule: Schedule::Constant,
                optimizer: OptimParams { weight_decay: wd, ..OptimParams::default() },
                ..TrainConfig::finetune_default(epochs, 3)
            };
            let run = implant_backdoor(&theta_pre, &model, &task.train, trig, 0.03, 7, &cfg).unwrap();
            let test_trig = stamp_eval_set(&task.test, trig, 11).unwrap();
            let ev = evaluate(&run.weights, &model, &task.test, &test_trig, target).unwrap();
            let ctrl = implant_backdoor(&theta_pre, &model, &task.train, trig, 0.0, 7, &cfg).unwrap();
            let ctrl_ca = clean_accuracy(&ctrl.weights, &model, &task.test).unwrap();
            println!(
                "  {name:8} CA {:.3} ASR {:.3} (ctrl CA {:.3})  [{:.1}s]",
                ev.ca, ev.asr, ctrl_ca, t.elapsed().as_secs_f64()
            );
        }
    }
}
