//! DI index, worst-case DI and the Monte-Carlo null on a hand-built ensemble
//! of three runs where occlusion pushes errors towards class 0.
//!
//!     cargo run --release --example di_null

use occkit::metrics::{
    class_increases, di_index, di_index_worst_case, di_null, dominant_class, NullVariant, PredictionLog,
    PredictionRecord, RunEnsemble, RunPair,
};
use occkit::{derive_stream, Result};

fn main() -> Result<()> {
    let (n, k) = (2000, 5);
    let mut rng = derive_stream(1, "di-example", 0);
    let truth: Vec<usize> = (0..n).map(|i| i % k).collect();
    let mut runs = Vec::new();
    for r in 0..3 {
        let mut draw = |cond: &str, err: f64, bias: f64| -> Result<PredictionLog> {
            let recs = truth
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let pred = if rng.uniform() >= err {
                        t
                    } else if t != 0 && rng.uniform() < bias {
                        0
                    } else {
                        (t + 1 + rng.below(k - 1)) % k
                    };
                    PredictionRecord::new(format!("img{i:05}"), t, pred)
                })
                .collect();
            PredictionLog::new(cond, k, recs)
        };
        runs.push(RunPair { original: draw("test", 0.1, 0.0)?, distorted: draw("test@occ", 0.4 + 0.05 * r as f64, 0.5)? });
    }
    let e = RunEnsemble::new(runs)?;
    let incs: Vec<Vec<f64>> = e.runs().iter().map(|r| class_increases(&r.original, &r.distorted).map(|c| c.0)).collect::<Result<_>>()?;
    for (r, c) in incs.iter().enumerate() {
        println!("run {r}: increases {:?}", c.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    }
    println!("dominant class {}", dominant_class(&incs)?);
    let di = di_index(&e)?;
    println!("DI {di:.4}, worst-case {:.4}", di_index_worst_case(&e)?);
    for variant in [NullVariant::PerExample, NullVariant::AllToOne] {
        let null = di_null(&e, variant, 2000, 9)?;
        println!("null {variant}: {:.4} ± {:.4} (DI is {:.1}x the mean)", null.mean, null.std, di / null.mean);
    }
    Ok(())
}
