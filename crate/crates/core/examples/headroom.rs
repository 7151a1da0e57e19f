//! Oracle run behind the headroom regression bound: DMFP accuracy minus the
//! best single base classifier on the 6000-record synthetic fixture.
//!
//! cargo run --release -p dmfp-core --example headroom -- [seeds...]

use dmfp_core::baselines::BaselineKind;
use dmfp_core::data::{split_dataset, ModalityId};
use dmfp_core::pipeline::{evaluate, PipelineConfig, Systems, TrainedPipeline};
use dmfp_core::synth::{generate, SynthConfig};

fn main() {
    let seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse().expect("seed")).collect();
    let seeds = if seeds.is_empty() { vec![7] } else { seeds };
    for seed in seeds {
        let (ds, _) = generate(&SynthConfig {
            n: 6000,
            n_regions: 3,
            noise: 0.1,
            seed,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut cfg = PipelineConfig::default().with_seed(seed);
        cfg.fusion.ncfg.k_v = 169;
        cfg.fusion.ncfg.k_p = 19;
        let split = split_dataset(&ds, &cfg.split).unwrap();
        let systems = Systems {
            variants: vec![],
            baselines: vec![
                BaselineKind::SingleModality(ModalityId::Object),
                BaselineKind::SingleModality(ModalityId::Scene),
                BaselineKind::SingleModality(ModalityId::Tag),
                BaselineKind::MajorityVote,
            ],
        };
        let t = std::time::Instant::now();
        let p = TrainedPipeline::train(&split.train, &split.estimate, &cfg, &systems).unwrap();
        let ev = evaluate(&p, &split.test).unwrap();
        let dmfp = ev.report("DMFP").unwrap();
        let best = ["object", "scene", "tag"]
            .iter()
            .map(|s| ev.report(s).unwrap().accuracy)
            .fold(f64::MIN, f64::max);
        let mv = ev.report("majority-vote").unwrap();
        println!(
            "seed {seed}: dmfp acc {:.2} f1 {:.4} | best single {:.2} | mv acc {:.2} f1 {:.4} | gap {:.2} | {:.1}s",
            dmfp.accuracy,
            dmfp.private.f1,
            best,
            mv.accuracy,
            mv.private.f1,
            dmfp.accuracy - best,
            t.elapsed().as_secs_f64()
        );
    }
}
