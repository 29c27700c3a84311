use std::time::Instant;
use triggerbench::arith::{negate_unlearn, search_alpha, AlphaGrid, AlphaSearchPolicy, SelectionRule};
use triggerbench::bench::{clean_accuracy, evaluate};
use triggerbench::data::{build_forget_set, gen_dataset, stamp_eval_set, DatasetSpec, Placement, TriggerKind, TriggerSpec};
use triggerbench::nn::{self, ModelSpec};
use triggerbench::train::{estimate_trigger_vector, implant_backdoor, train, Schedule, TrainConfig};

fn main() {
    let t0 = Instant::now();
    let task = gen_dataset(&DatasetSpec {
        train_per_class: 200,
        ..DatasetSpec::desk_default(0)
    })
    .unwrap();
    let pre_data = gen_dataset(&DatasetSpec {
        train_per_class: 150,
        ..DatasetSpec::desk_default(0 ^ 0x9e37)
    })
    .unwrap();
    let target = 0u16;
    let badnet = TriggerSpec {
        kind: TriggerKind::Badnet { patch_side: 4, placement: Placement::Fixed { x: 25, y: 25 }, noise_seed: 100 },
        target_label: target,
    };
    let wanet = TriggerSpec {
        kind: TriggerKind::Wanet { control_grid: 32, strength: 4.0, warp_seed: 100 },
        target_label: target,
    };
    let profiles: Vec<(&str, TriggerSpec, usize)> = vec![
        ("badnet", badnet, 16),
        ("blended", TriggerSpec::blended(target, 100), 28),
        ("wanet", wanet, 14),
        ("sig", TriggerSpec::sig(target), 12),
    ];
    for seed in [0u64, 1] {
        let model = ModelSpec::desk_cnn(10, 1000 + seed);
        let w0 = nn::init(&model).unwrap();
        let pre = train(&w0, &model, &pre_data.train, &TrainConfig::pretrain_default(5, 2000 + seed)).unwrap();
        let theta_pre = pre.weights;
        for (name, trig, epochs) in &profiles {
            let t = Instant::now();
            let cfg = TrainConfig {
                epochs: *epochs,
                learning_rate: 2e-3,
                schedule: Schedule::Constant,
                ..TrainConfig::finetune_default(*epochs, 3000 + seed)
            };
            let run = implant_backdoor(&theta_pre, &model, &task.train, trig, 0.03, 7 + seed, &cfg).unwrap();
            let theta_b = run.weights;
            let test_trig = stamp_eval_set(&task.test, trig, 11).unwrap();
            let before = evaluate(&theta_b, &model, &task.test, &test_trig, target).unwrap();

            // TBAR
            let (forget_src, val_eval) = task.val.split_at(256);
            let forget = build_forget_set(&forget_src, 256, trig, 0.0).unwrap();
            let est_cfg = TrainConfig {
                learning_rate: 2e-3,
                ..TrainConfig::forget_default(4000 + seed)
            };
            let (tau, _) = estimate_trigger_vector(&theta_b, &model, &forget, &est_cfg).unwrap();
            let val_trig = stamp_eval_set(&val_eval, trig, 13).unwrap();
            let policy = AlphaSearchPolicy {
                grid: AlphaGrid::default(),
                rule: SelectionRule::MinAsrThenMaxCa,
                val_clean: &val_eval,
                val_triggered: &val_trig,
                target,
            };
            let sweep = search_alpha(&theta_b, &tau, &model, &policy).unwrap();
            let theta_c = negate_unlearn(&theta_b, &tau, sweep.alpha_star).unwrap();
            let after = evaluate(&theta_c, &model, &task.test, &test_trig, target).unwrap();
            println!(
                "seed {seed} {name:8} implant CA {:.3} ASR {:.3} | a* {:.2} -> CA {:.3} ASR {:.4} ret {:.3} [{:.0}s]",
                before.ca, before.asr, sweep.alpha_star, after.ca, after.asr, after.ca / before.ca,
                t.elapsed().as_secs_f64()
            );
        }
        // control arm once per seed (reuse badnet cfg epochs 16)
        let cfg = TrainConfig {
            epochs: 16,
            learning_rate: 2e-3,
            schedule: Schedule::Constant,
            ..TrainConfig::finetune_default(16, 3000 + seed)
        };
        let ctrl = implant_backdoor(&theta_pre, &model, &task.train, &profiles[0].1, 0.0, 7 + seed, &cfg).unwrap();
        println!(
            "seed {seed} control CA {:.3}",
            clean_accuracy(&ctrl.weights, &model, &task.test).unwrap()
        );
    }
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
}
