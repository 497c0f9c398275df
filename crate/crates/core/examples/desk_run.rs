//! Desk-scale eXBL experiment on the decoy dataset.
//!
//! Usage: `cargo run --release --example desk_run -- [seed] [base_epochs] [refine_epochs] [expl_weight] [lr]`

use std::time::Instant;

use exbl_core::data::{generate_decoy, DecoySpec};
use exbl_core::exemplar::select_exemplars;
use exbl_core::model::{build_model, ModelConfig};
use exbl_core::train::{evaluate, refine_exbl, train_base, NoopObserver, TrainConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> exbl_core::Result<()> {
    let seed: u64 = arg(1, 0);
    let spec = DecoySpec {
        rng_seed: seed,
        ..DecoySpec::default()
    };
    let data = generate_decoy(&spec)?;
    let clean = data.test_clean.as_ref().expect("decoy emits a clean test split");

    let mut mcfg = ModelConfig::small_cnn(spec.classes);
    mcfg.seed = seed;
    let model = build_model(&mcfg)?;
    let mut base_cfg = TrainConfig::base();
    base_cfg.epochs = arg(2, 30);
    base_cfg.learning_rate = arg(5, 1e-3);
    base_cfg.seed = seed;

    let t = Instant::now();
    let base = train_base(&model, &data.train, &data.val, &base_cfg, &mut NoopObserver)?;
    let before = evaluate(&model, &data.test)?;
    let before_clean = evaluate(&model, clean)?;
    println!(
        "base: {} epochs ({:.0}s) acc {:.3} clean {:.3} AR {:.3}",
        base.history.len(),
        t.elapsed().as_secs_f64(),
        before.accuracy,
        before_clean.accuracy,
        before.mean_ar.unwrap_or(f64::NAN)
    );

    let sel = select_exemplars(&model, &data.train)?;
    println!("exemplars: {:?}", sel.pair.meta);

    let mut refine_cfg = TrainConfig::refine();
    refine_cfg.epochs = arg(3, 20);
    refine_cfg.learning_rate = arg(5, 1e-3);
    refine_cfg.loss.expl_weight = arg(4, 1.0);
    refine_cfg.seed = seed;
    let t = Instant::now();
    let refined = refine_exbl(&model, &base, &sel.pair, &data.train, &data.val, &refine_cfg, &mut NoopObserver)?;
    for e in &refined.history {
        println!(
            "  epoch {:>3} ce {:.4} expl {:.4} val {:.4} acc {:.3} AR {:.3}",
            e.epoch,
            e.train.cross_entropy,
            e.train.explanation,
            e.val.total,
            e.val_accuracy,
            e.val_mean_ar.unwrap_or(f64::NAN)
        );
    }
    let after = evaluate(&model, &data.test)?;
    let after_clean = evaluate(&model, clean)?;
    println!(
        "exbl: {} epochs ({:.0}s) acc {:.3} clean {:.3} AR {:.3}",
        refined.history.len(),
        t.elapsed().as_secs_f64(),
        after.accuracy,
        after_clean.accuracy,
        after.mean_ar.unwrap_or(f64::NAN)
    );
    Ok(())
}
