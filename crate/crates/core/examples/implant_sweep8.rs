use std::time::Instant;
use triggerbench::bench::{clean_accuracy, evaluate};
use triggerbench::data::{gen_dataset, stamp_eval_set, DatasetSpec, Placement, TriggerKind, TriggerSpec};
use triggerbench::nn::{self, LayerSpec, ModelSpec};
use triggerbench::train::{implant_backdoor, train, Schedule, TrainConfig};

fn main() {
    let target = 0u16;
    let task = gen_dataset(&DatasetSpec {
        train_per_class: 200,
        ..DatasetSpec::desk_default(0)
    })
    .unwrap();

    // Linear probe.
    let probe_spec = ModelSpec {
        input_shape: (3, 32, 32),
        layers: vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 10 }],
        class_count: 10,
        seed: 0,
    };
    let w0p = nn::init(&probe_spec).unwrap();
    let probe_cfg = TrainConfig {
        epochs: 30,
        learning_rate: 3e-3,
        schedule: Schedule::Constant,
        ..TrainConfig::finetune_default(30, 5)
    };
    let probe = train(&w0p, &probe_spec, &task.train, &probe_cfg).unwrap();
    println!("linear probe test acc {:.3}", clean_accuracy(&probe.weights, &probe_spec, &task.test).unwrap());

    // In-distribution 5-epoch CA.
    let model = ModelSpec::desk_cnn(10, 1);
    let w0 = nn::init(&model).unwrap();
    let indist = train(&w0, &model, &task.train, &TrainConfig::pretrain_default(5, 2)).unwrap();
    println!("in-dist 5-epoch CA {:.3}", clean_accuracy(&indist.weights, &model, &task.test).unwrap());

    // Transfer pretrain.
    let pre_data = gen_dataset(&DatasetSpec::desk_default(0 ^ 0x9e37)).unwrap();
    let pre = train(&w0, &model, &pre_data.train, &TrainConfig::pretrain_default(5, 2)).unwrap();
    let theta_pre = pre.weights;

    let badnet = TriggerSpec {
        kind: TriggerKind::Badnet { patch_side: 4, placement: Placement::Fixed { x: 25, y: 25 }, noise_seed: 100 },
        target_label: target,
    };
    let wanet2 = TriggerSpec {
        kind: TriggerKind::Wanet { control_grid: 32, strength: 2.0, warp_seed: 100 },
        target_label: target,
    };
    let cases: Vec<(String, TriggerSpec, usize)> = vec![
        ("badnet4-fix 14ep".into(), badnet, 14),
        ("blended 16ep".into(), TriggerSpec::blended(target, 100), 16),
        ("wanet-s2 16ep".into(), wanet2, 16),
        ("sig 10ep".into(), TriggerSpec::sig(target), 10),
    ];
    for (name, trig, epochs) in &cases {
        let t = Instant::now();
        let cfg = TrainConfig {
            epochs: *epochs,
            learning_rate: 2e-3,
            schedule: Schedule::Constant,
            ..TrainConfig::finetune_default(*epochs, 3)
        };
        let run = implant_backdoor(&theta_pre, &model, &task.train, trig, 0.03, 7, &cfg).unwrap();
        let ctrl = implant_backdoor(&theta_pre, &model, &task.train, trig, 0.0, 7, &cfg).unwrap();
        let test_trig = stamp_eval_set(&task.test, trig, 11).unwrap();
        let ev = evaluate(&run.weights, &model, &task.test, &test_trig, target).unwrap();
        let cca = clean_accuracy(&ctrl.weights, &model, &task.test).unwrap();
        println!(
            "{name:18} CA {:.3} ASR {:.3} ctrl {:.3}  [{:.1}s]",
            ev.ca, ev.asr, cca, t.elapsed().as_secs_f64()
        );
    }
}
