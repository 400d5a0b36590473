use crate::config::{read_input, RunConfig};
use anyhow::Result;
use crt_conformal::dgp::{control_icc, generate_trial, icc_anova, DgpConfig};
use crt_conformal::io::read_trial;
use crt_conformal::Arm;
use std::path::Path;

/// One-way ANOVA ICC of control outcomes, from a file or a simulated trial.
pub fn run(cfg: &RunConfig, data: Option<&Path>) -> Result<()> {
    match data {
        Some(path) => {
            let trial = read_trial(read_input(path, "data file")?.as_bytes(), cfg.randomization_probability)?;
            let groups: Vec<Vec<f64>> = trial
                .arm_clusters(Arm::Control)
                .map(|c| c.members.iter().filter_map(|r| r.outcome).collect())
                .collect();
            println!("control clusters {}", groups.len());
            println!("icc {}", crt_conformal::evaluation::format_sig(icc_anova(&groups)?, 6));
        }
        None => {
            let study = cfg.study()?;
            let dgp = DgpConfig { ..study.dgp };
            let trial = generate_trial(&dgp)?;
            let control: Vec<_> = trial
                .observed_truth
                .iter()
                .zip(trial.observed.clusters())
                .filter(|(_, c)| c.arm() == Arm::Control)
                .map(|(t, _)| t.clone())
                .collect();
            let fmt = |v: f64| crt_conformal::evaluation::format_sig(v, 6);
            println!("control clusters {}", control.len());
            println!("icc {}", fmt(control_icc(&control, false)?));
            println!("icc_adjusted {}", fmt(control_icc(&control, true)?));
        }
    }
    Ok(())
}
