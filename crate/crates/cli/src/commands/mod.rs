pub mod beta;
pub mod bounds;
pub mod counterexample;
pub mod sampler;
pub mod train;

use papl_core::{TabularDenoiser, Vocab};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, InitKind};
use crate::Usage;

/// Generator for instance `index` of group `group`, independent of the order
/// in which instances are processed.
pub fn instance_rng(seed: u64, group: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((group << 32) | index);
    rng
}

pub fn load_table(path: &std::path::Path) -> anyhow::Result<TabularDenoiser> {
    let text = std::fs::read_to_string(path).map_err(|e| Usage(format!("cannot read table {}: {e}", path.display())))?;
    let table: papl_core::DenoiserTable =
        serde_json::from_str(&text).map_err(|e| Usage(format!("malformed table {}: {e}", path.display())))?;
    table
        .build()
        .map_err(|e| Usage(format!("invalid table {}: {e}", path.display())).into())
}

/// Denoisers of the configured kind. A table file yields a single instance
/// whatever `count` is.
pub fn denoisers(cfg: &ExperimentConfig, len: usize, group: u64, count: usize) -> anyhow::Result<Vec<(TabularDenoiser, ChaCha8Rng)>> {
    let vocab: Vocab = cfg.vocab()?;
    match cfg.denoiser.init {
        InitKind::Table => {
            let path = cfg
                .denoiser
                .table
                .as_ref()
                .ok_or_else(|| Usage("denoiser.init = \"table\" needs denoiser.table".into()))?;
            let den = load_table(path)?;
            if den.len() != len {
                return Err(Usage(format!("table has length {}, run needs {len}", den.len())).into());
            }
            Ok(vec![(den, instance_rng(cfg.seed, group, 0))])
        }
        InitKind::Uniform | InitKind::Random => (0..count as u64)
            .map(|i| {
                let mut rng = instance_rng(cfg.seed, group, i);
                let den = match cfg.denoiser.init {
                    InitKind::Uniform => TabularDenoiser::uniform(vocab, len)?,
                    _ => TabularDenoiser::random(vocab, len, cfg.denoiser.scale, &mut rng)?,
                };
                Ok((den, rng))
            })
            .collect(),
    }
}
