//! Render-path timing: smoothing stack, parametric weights and blend on an
//! in-memory synthetic image. No file access happens inside the timed
//! region.

use std::time::{Duration, Instant};

use crate::error::{BokehError, Result};
use crate::pipeline::{render_at_native, WeightSource};
use crate::synthetic::{gen_scene, SceneSpec};
use crate::weights::FocusParams;

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub width: usize,
    pub height: usize,
    pub threads: usize,
    pub times: Vec<Duration>,
}

impl BenchReport {
    pub fn median(&self) -> Duration {
        let mut t = self.times.clone();
        t.sort();
        let n = t.len();
        if n % 2 == 1 {
            t[n / 2]
        } else {
            (t[n / 2 - 1] + t[n / 2]) / 2
        }
    }
}

/// Times `iters` renders of a `width` x `height` scene on a pool of
/// `threads` workers.
pub fn bench_render(
    width: usize,
    height: usize,
    iters: usize,
    threads: usize,
    kernels: &[usize],
) -> Result<BenchReport> {
    if iters == 0 || threads == 0 {
        return Err(BokehError::InvalidParameter(
            "iters and threads must be positive".into(),
        ));
    }
    let (img, depth) = gen_scene(&SceneSpec::random(0, width, height))?;
    let source = WeightSource::Parametric {
        params: FocusParams::evenly_spaced(0.0, kernels.len() + 1)?,
        hard: false,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| BokehError::InvalidParameter(e.to_string()))?;
    let times = pool.install(|| {
        (0..iters)
            .map(|_| {
                let start = Instant::now();
                let out = render_at_native(&img, &depth, kernels, &source)?;
                let elapsed = start.elapsed();
                std::hint::black_box(out);
                Ok(elapsed)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BenchReport {
        width,
        height,
        threads,
        times,
    })
}
