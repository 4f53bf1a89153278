//! Training simulation of the square-root-loss divergence: a sigmoid head is
//! trained with Adam on fixed synthetic batches while the loss, gradient
//! variance, and NaN events are traced per iteration.
//!
//! The batch is drawn once and held fixed across iterations (the training
//! target set); `resample_per_iter` redraws it every step instead. With
//! halt-on-nan set, no optimizer step executes after the first NaN event and
//! the trace ends at that iteration.

use serde::Serialize;

use stablab::headnet::{init_weights, ConvDims, InitScheme};
use stablab::optimkit::{adam_step, AdamState};
use stablab::simgen::{dataset_stats, RngStream};

use crate::config::{ConfigError, SqrtSimConfig};
use crate::pipeline::{draw_batch, loss_and_backward, BatchSpec, StepError};
use crate::report::{Manifest, SimReport, Summary, TraceRow};
use crate::RunError;

#[derive(Serialize)]
struct SqrtManifestConfig<'a> {
    config: &'a SqrtSimConfig,
    halt_on_nan: bool,
}

pub fn run_sqrt_divergence(
    cfg: &SqrtSimConfig,
    seed: u64,
    halt_on_nan: bool,
) -> Result<SimReport, RunError> {
    cfg.validate()?;
    let stats = dataset_stats(&cfg.dataset).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let loss_cfg = cfg.loss.resolve()?;

    let mut rng = RngStream::new(seed, 0).rng();
    let dims = ConvDims::square(cfg.kernel, cfg.channels);
    let mut head =
        init_weights(InitScheme::Normal { sigma: cfg.init_sigma }, dims, cfg.max_depth, &mut rng);
    let spec = BatchSpec {
        map_size: cfg.map_size,
        channels: cfg.channels,
        batch_size: cfg.batch_size,
    };
    let mut batch = draw_batch(&stats, &spec, &mut rng);

    let mut adam = AdamState::new(head.param_count(), cfg.lr.lr_at(0));
    let mut params = vec![0.0f32; head.param_count()];
    let mut grads_flat = vec![0.0f32; head.param_count()];

    let mut trace = Vec::with_capacity(cfg.iterations as usize);
    let mut first_event = None;
    let mut skipped = 0u64;

    for t in 0..cfg.iterations {
        let lr = cfg.lr.lr_at(t);
        if cfg.resample_per_iter && t > 0 {
            batch = draw_batch(&stats, &spec, &mut rng);
        }
        let step = match loss_and_backward(&head, &batch, &loss_cfg, cfg.reduction, t) {
            Ok(step) => step,
            Err(StepError::EmptyBatch) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        trace.push(TraceRow {
            iteration: t,
            lr,
            loss: step.loss.value,
            grad_var: step.grad_var,
            nan_flag: step.event.is_some(),
        });
        if let Some(event) = step.event {
            if first_event.is_none() {
                first_event = Some(event);
            }
            if halt_on_nan {
                break;
            }
        }
        adam.lr = lr;
        head.write_params(&mut params);
        step.grads.write_flat(&mut grads_flat);
        adam_step(&mut adam, &mut params, &grads_flat).expect("param and grad vectors are sized together");
        head.read_params(&params);
    }

    let summary = Summary::from_trace(&trace, first_event, skipped);
    let manifest = Manifest::new(
        "sim-sqrt",
        seed,
        &SqrtManifestConfig { config: cfg, halt_on_nan },
    );
    Ok(SimReport { manifest, trace, summary })
}
