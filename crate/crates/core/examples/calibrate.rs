//! Pipeline calibration harness: runs the full attack/unlearn cycle per
//! trigger kind and prints the numbers the acceptance thresholds depend on.

use std::time::Instant;
use triggerbench::arith::{
    clean_residual, negate_unlearn, search_alpha, wd_error_grid, AlphaGrid, AlphaSearchPolicy,
    SelectionRule, WdGridConfig,
};
use triggerbench::bench::{clean_accuracy, evaluate};
use triggerbench::data::{
    build_forget_set, gen_dataset, stamp_eval_set, DatasetSpec, TriggerSpec,
};
use triggerbench::inverse::{
    build_proxy_forget_set, detect, identify_target_class, invert_trigger, logit_shift_target,
    stamp_eval_set_inverted, InversionConfig, InversionObjective,
};
use triggerbench::nn::{self, ModelSpec};
use triggerbench::train::{
    estimate_trigger_vector, gradient_ascent, implant_backdoor, train, AscentEval, StopPolicy,
    TrainConfig,
};

fn main() {
    let t0 = Instant::now();
    let data = gen_dataset(&DatasetSpec::desk_default(0)).unwrap();
    println!("[{:.1}s] dataset generated", t0.elapsed().as_secs_f64());

    let seed = 0u64;
    let model = ModelSpec::desk_cnn(10, seed);
    let w0 = nn::init(&model).unwrap();
    let pre_cfg = TrainConfig::pretrain_default(5, seed.wrapping_add(1));
    let pre = train(&w0, &model, &data.train, &pre_cfg).unwrap();
    let theta_pre = pre.weights;
    println!(
        "[{:.1}s] pretrain: train acc per epoch {:?}",
        t0.elapsed().as_secs_f64(),
        pre.history.iter().map(|h| (h.train_accuracy * 100.0).round()).collect::<Vec<_>>()
    );
    let pre_ca = clean_accuracy(&theta_pre, &model, &data.test).unwrap();
    println!("pretrain test CA = {:.3}", pre_ca);

    let target = 0u16;
    let triggers = vec![
        ("badnet", TriggerSpec::badnet(target, 100)),
        ("blended", TriggerSpec::blended(target, 100)),
        ("wanet", TriggerSpec::wanet(target, 32, 100)),
        ("sig", TriggerSpec::sig(target)),
    ];

    for (name, trig) in &triggers {
        let t1 = Instant::now();
        let ft_cfg = TrainConfig::finetune_default(4, seed.wrapping_add(2));
        let implant = implant_backdoor(&theta_pre, &model, &data.train, trig, 0.03, 7, &ft_cfg).unwrap();
        let theta_b = implant.weights;
        let test_trig = stamp_eval_set(&data.test, trig, 11).unwrap();
        let before = evaluate(&theta_b, &model, &data.test, &test_trig, target).unwrap();

        // control (rate 0)
        let ctrl = implant_backdoor(&theta_pre, &model, &data.train, trig, 0.0, 7, &ft_cfg).unwrap();
        let ctrl_ca = clean_accuracy(&ctrl.weights, &model, &data.test).unwrap();

        // TBAR
        let (forget_src, val_eval) = data.val.split_at(256);
        let forget = build_forget_set(&forget_src, 256, trig, 0.0).unwrap();
        let est_cfg = TrainConfig::forget_default(seed.wrapping_add(3));
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
        let after = evaluate(&theta_c, &model, &data.test, &test_trig, target).unwrap();
        println!(
            "{name:8} implant CA {:.3} ASR {:.3} | ctrl CA {:.3} | alpha* {:.2} -> CA {:.3} ASR {:.4} (CA ret {:.3}) [{:.1}s]",
            before.ca,
            before.asr,
            ctrl_ca,
            sweep.alpha_star,
            after.ca,
            after.asr,
            after.ca / before.ca,
            t1.elapsed().as_secs_f64()
        );

        if *name == "badnet" {
            // WD grid
            let t2 = Instant::now();
            let tau_c = clean_residual(&theta_pre, &theta_b, &tau, sweep.alpha_star).unwrap();
            let tau_t = tau.scaled(sweep.alpha_star);
            let (d_clean, d_src) = val_eval.split_at(val_eval.len() / 2);
            let d_trig = stamp_eval_set(&d_src, trig, 17).unwrap();
            let grid = wd_error_grid(
                &theta_pre,
                &tau_c,
                &tau_t,
                &model,
                &d_clean,
                &d_trig,
                &WdGridConfig::default(),
            )
            .unwrap();
            let norm = grid.xi_normalized();
            let res = grid.alpha_t_axis.len();
            let mut min_interior = f64::INFINITY;
            for i in 0..res {
                for j in 0..res {
                    if grid.alpha_c_axis[i] >= 0.5
                        && grid.alpha_t_axis[j] >= 0.5
                        && i + 1 < res
                        && j + 1 < res
                    {
                        min_interior = min_interior.min(norm[i * res + j]);
                    }
                }
            }
            println!(
                "  wd-grid: xi(0,0) = {}, min interior(>=0.5) = {:.4} [{:.1}s]",
                norm[0],
                min_interior,
                t2.elapsed().as_secs_f64()
            );

            // GA comparison
            let t3 = Instant::now();
            let ga_cfg = TrainConfig::ascent_default(seed.wrapping_add(4));
            let stop = StopPolicy { max_epochs: 8, ca_floor: None };
            let ca_ref = clean_accuracy(&theta_b, &model, &val_eval).unwrap();
            let eval_ctx = AscentEval {
                clean_val: &val_eval,
                triggered_val: &val_trig,
                target,
                ca_reference: ca_ref,
            };
            let ga = gradient_ascent(&theta_b, &model, &forget, &ga_cfg, &stop, &eval_ctx).unwrap();
            println!("  GA trajectory (ca, asr):");
            for p in &ga.trajectory {
                println!("    epoch {} ca {:.3} asr {:.4} loss {:.3}", p.epoch, p.ca_val, p.asr_val, p.mean_loss);
            }
            println!("  [{:.1}s]", t3.elapsed().as_secs_f64());
        }
    }

    // Inversion and detection on badnet + blended.
    for (name, trig) in triggers.iter().take(2) {
        let t4 = Instant::now();
        let ft_cfg = TrainConfig::finetune_default(4, seed.wrapping_add(2));
        let implant = implant_backdoor(&theta_pre, &model, &data.train, trig, 0.03, 7, &ft_cfg).unwrap();
        let theta_b = implant.weights;
        let (_, val_eval) = data.val.split_at(256);
        let inv_cfg = InversionConfig::default();
        let suspect = invert_trigger(&theta_b, &model, &val_eval, InversionObjective::EmbeddingSimilarity, &inv_cfg).unwrap();
        let reference = invert_trigger(&theta_pre, &model, &val_eval, InversionObjective::EmbeddingSimilarity, &inv_cfg).unwrap();
        let verdict = detect(&suspect, &reference, 0.33).unwrap();
        println!(
            "{name:8} inversion: suspect p_l1 {:.4} reference p_l1 {:.4} ratio {:.3} flagged {} [{:.1}s]",
            verdict.suspect_p_l1,
            verdict.reference_p_l1,
            verdict.ratio,
            verdict.flagged,
            t4.elapsed().as_secs_f64()
        );
        let (probe_t, conf) = identify_target_class(&theta_b, &model, &suspect, &val_eval).unwrap();
        let proxy_val = stamp_eval_set_inverted(&val_eval, &suspect).unwrap();
        let (shift_t, _) = logit_shift_target(&theta_pre, &theta_b, &model, &proxy_val).unwrap();
        println!("  probe target {probe_t} (conf {conf:.2}), logit-shift target {shift_t}, true {target}");

        // Proxy unlearning path.
        let (forget_src, _) = data.val.split_at(256);
        let proxy_forget = build_proxy_forget_set(&suspect, probe_t, &forget_src, 256).unwrap();
        let est_cfg = TrainConfig::forget_default(seed.wrapping_add(3));
        let (tau_p, _) = estimate_trigger_vector(&theta_b, &model, &proxy_forget, &est_cfg).unwrap();
        let policy = AlphaSearchPolicy {
            grid: AlphaGrid::default(),
            rule: SelectionRule::WindowAfterZero { window: 10, ca_floor: 0.90 },
            val_clean: &val_eval,
            val_triggered: &proxy_val,
            target: probe_t,
        };
        let sweep = search_alpha(&theta_b, &tau_p, &model, &policy).unwrap();
        let theta_c = negate_unlearn(&theta_b, &tau_p, sweep.alpha_star).unwrap();
        let test_trig = stamp_eval_set(&data.test, trig, 11).unwrap();
        let before = evaluate(&theta_b, &model, &data.test, &test_trig, target).unwrap();
        let after = evaluate(&theta_c, &model, &data.test, &test_trig, target).unwrap();
        println!(
            "  proxy unlearn: alpha* {:.2}, true ASR {:.3} -> {:.3}, CA {:.3} -> {:.3} (ret {:.3})",
            sweep.alpha_star, before.asr, after.asr, before.ca, after.ca, after.ca / before.ca
        );
    }

    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
