use std::fmt;

use crate::data::split_train_val;
use crate::error::Result;
use crate::models::{build_variant, count_params, ModelVariant, VariantFlags};

use super::{train_on, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: ModelVariant,
    pub flags: VariantFlags,
    pub trainable_params: u64,
    /// Highest validation accuracy over the run.
    pub best_val_acc: f64,
    pub final_val_acc: f64,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

/// Trains every variant on one shared split under the same seed and
/// schedule.
pub fn run_ablation(base: &TrainConfig) -> Result<AblationReport> {
    base.validate()?;
    let samples = base.data.load(base.model.input_size)?;
    let (train_set, val) = split_train_val(samples, base.val_frac, base.seed)?;
    let mut rows = Vec::new();
    for variant in ModelVariant::ALL {
        log::info!("ablation: training {}", variant.label());
        let cfg = TrainConfig {
            variant,
            output_dir: base.output_dir.as_ref().map(|d| d.join(variant.tag())),
            ..base.clone()
        };
        let out = train_on(&cfg, &train_set, val.clone())?;
        let params = count_params(&build_variant::<f32>(variant, &base.model, base.seed)?).trainable;
        rows.push(AblationRow {
            variant,
            flags: variant.flags(),
            trainable_params: params,
            best_val_acc: out.history.iter().map(|r| r.val_acc).fold(0.0, f64::max),
            final_val_acc: out.history.last().map_or(0.0, |r| r.val_acc),
            epochs_run: out.history.len(),
        });
    }
    Ok(AblationReport { rows })
}

fn mark(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "model,channel2,skip_connection,conv_block7,trainable_params,best_val_acc,final_val_acc,epochs,reference_acc\n",
        );
        for r in &self.rows {
            out += &format!(
                "{},{},{},{},{},{:.2},{:.2},{},{:.2}\n",
                r.variant.tag(),
                r.flags.channel2,
                r.flags.skip_connection,
                r.flags.conv_block7,
                r.trainable_params,
                r.best_val_acc,
                r.final_val_acc,
                r.epochs_run,
                r.variant.reference_accuracy()
            );
        }
        out
    }

    /// Variant labels sorted by best validation accuracy, highest first.
    pub fn ranking(&self) -> Vec<&'static str> {
        let mut rows: Vec<&AblationRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| b.best_val_acc.total_cmp(&a.best_val_acc));
        rows.into_iter().map(|r| r.variant.label()).collect()
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<9} {:>8} {:>5} {:>7} {:>10} {:>9} {:>10} {:>10}",
            "model", "channel2", "skip", "block7", "params", "best VA", "final VA", "reference"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<9} {:>8} {:>5} {:>7} {:>10} {:>9.2} {:>10.2} {:>10.2}",
                r.variant.label(),
                mark(r.flags.channel2),
                mark(r.flags.skip_connection),
                mark(r.flags.conv_block7),
                r.trainable_params,
                r.best_val_acc,
                r.final_val_acc,
                r.variant.reference_accuracy()
            )?;
        }
        write!(f, "ranking by best VA: {}", self.ranking().join(" > "))
    }
}
