//! Per-subcommand option records.
//!
//! Every option is optional at parse time so that a JSON config file can
//! fill in whatever the command line leaves out. Config keys are the flag
//! names with underscores (`t_high` for `--t-high`).

use std::path::PathBuf;

use serde::Deserialize;

macro_rules! options {
    ($(#[$m:meta])* $name:ident { $( $(#[$fm:meta])* $field:ident : $ty:ty ),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Default, clap::Args, Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $name {
            $( $(#[$fm])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        impl $name {
            /// Fills every unset field from `base`.
            pub fn overlay(self, base: Self) -> Self {
                Self { $( $field: self.$field.or(base.$field), )* }
            }
        }
    };
}

options!(SynthOpts {
    /// Volume shape as ZxYxX.
    shape: String,
    /// Number of Voronoi seeds.
    seeds: usize,
    anisotropy: f64,
    /// Gaussian noise standard deviation.
    sigma: f64,
    /// Per-section shift probability.
    jitter: f64,
    rng_seed: u64,
    gt_out: PathBuf,
    aff_out: PathBuf,
});

options!(MalisGradOpts {
    aff: PathBuf,
    gt: PathBuf,
    /// Divide loss and gradient by the total pair count.
    normalize: bool,
    /// Gradient output (edge volume).
    grad_out: PathBuf,
    /// Affinities after one clamped descent step of size --step.
    corrected_out: PathBuf,
    step: f32,
});

options!(WatershedOpts {
    aff: PathBuf,
    out: PathBuf,
    t_high: f32,
    t_low: f32,
    size_min: usize,
    t_merge: f32,
});

options!(SizeFilterOpts {
    labels: PathBuf,
    aff: PathBuf,
    out: PathBuf,
    size_min: usize,
    t_merge: f32,
});

options!(BuildRagOpts {
    labels: PathBuf,
    aff: PathBuf,
    /// Edge CSV output; standard output when absent.
    out: PathBuf,
});

options!(TrainOpts {
    labels: PathBuf,
    aff: PathBuf,
    gt: PathBuf,
    model_out: PathBuf,
});

options!(AgglomerateOpts {
    labels: PathBuf,
    aff: PathBuf,
    /// `mean` or `logistic`.
    scorer: String,
    model: PathBuf,
    theta: f64,
    out: PathBuf,
    /// Merge tree output.
    tree: PathBuf,
});

options!(ApplyThresholdOpts {
    tree: PathBuf,
    labels: PathBuf,
    theta: f64,
    out: PathBuf,
});

options!(EvalOpts {
    seg: PathBuf,
    gt: PathBuf,
});

options!(CurveOpts {
    tree: PathBuf,
    labels: PathBuf,
    gt: PathBuf,
    /// Number of evenly spaced thresholds from 1 down to 0.
    steps: usize,
    /// CSV output; standard output when absent.
    out: PathBuf,
});

options!(PartitionOpts {
    /// Volume shape as ZxYxX; taken from --aff when absent.
    shape: String,
    /// Block core size as ZxYxX.
    block: String,
    /// Halo width as ZxYxX.
    halo: String,
    /// Directory receiving the manifest and optional crops.
    out_dir: PathBuf,
    /// Affinities to crop into one file per block.
    aff: PathBuf,
});

options!(StitchOpts {
    manifest: PathBuf,
    out: PathBuf,
    min_ratio: f64,
    min_voxels: u64,
});

options!(PipelineOpts {
    aff: PathBuf,
    /// Ground truth for the final evaluation.
    gt: PathBuf,
    out_dir: PathBuf,
    t_high: f32,
    t_low: f32,
    size_min: usize,
    t_merge: f32,
    scorer: String,
    model: PathBuf,
    theta: f64,
});

/// JSON run configuration: one optional section per subcommand.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub threads: Option<usize>,
    pub synth: Option<SynthOpts>,
    #[serde(rename = "malis-grad")]
    pub malis_grad: Option<MalisGradOpts>,
    pub watershed: Option<WatershedOpts>,
    #[serde(rename = "size-filter")]
    pub size_filter: Option<SizeFilterOpts>,
    #[serde(rename = "build-rag")]
    pub build_rag: Option<BuildRagOpts>,
    pub train: Option<TrainOpts>,
    pub agglomerate: Option<AgglomerateOpts>,
    #[serde(rename = "apply-threshold")]
    pub apply_threshold: Option<ApplyThresholdOpts>,
    pub eval: Option<EvalOpts>,
    pub curve: Option<CurveOpts>,
    pub partition: Option<PartitionOpts>,
    pub stitch: Option<StitchOpts>,
    pub pipeline: Option<PipelineOpts>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_config() {
        let flags = WatershedOpts {
            t_high: Some(0.9),
            ..Default::default()
        };
        let config: RunConfig =
            serde_json::from_str(r#"{"watershed": {"t_high": 0.5, "t_low": 0.1}}"#).unwrap();
        let merged = flags.overlay(config.watershed.unwrap());
        assert_eq!(merged.t_high, Some(0.9));
        assert_eq!(merged.t_low, Some(0.1));
        assert_eq!(merged.size_min, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"watershed": {"t_hihg": 0.5}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": {}}"#).is_err());
    }
}
