//! Subcommand bodies. Each reads its inputs from a resolved [`RunConfig`] and
//! writes plot-ready CSV/JSON into `cfg.out`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{RunConfig, SynthKind};
use super::io::{self, LabeledMatrix};
use crate::calibrate::{self, LooOptions};
use crate::completion::CompletionConfig;
use crate::diagnostics;
use crate::distcal::{self, Categorical, TwinPanel};
use crate::error::{Error, Result};
use crate::matcore::{MaskedMatrix, Orientation};
use crate::synth;

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::param(format!("config is missing the '{what}' path")))
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.out)?;
    Ok(cfg.out.clone())
}

fn load_pair(cfg: &RunConfig) -> Result<(LabeledMatrix, LabeledMatrix)> {
    let human = io::read_matrix(required(&cfg.human, "human")?)?;
    let twin = io::read_matrix(required(&cfg.twin, "twin")?)?;
    if human.matrix.shape() != twin.matrix.shape() {
        return Err(Error::dim(format!(
            "human is {:?} but twin is {:?}",
            human.matrix.shape(),
            twin.matrix.shape()
        )));
    }
    Ok((human, twin))
}

/// Files written by a subcommand, relative to the output directory.
#[derive(Debug, Clone, Serialize)]
pub struct Written {
    pub command: &'static str,
    pub files: Vec<String>,
}

fn loo(cfg: &RunConfig, tau: Option<f64>) -> Result<(LabeledMatrix, calibrate::LooOutcome)> {
    let (human, twin) = load_pair(cfg)?;
    let method = cfg.build_method()?;
    if let Some(t) = tau {
        if !(t > 0.0) {
            return Err(Error::param("tau must be positive"));
        }
    }
    let opts = LooOptions {
        fisher_z: cfg.fisher_z,
        tau,
        preprocess: cfg.preprocess(),
    };
    let outcome = calibrate::loo_evaluate(&human.matrix, &twin.matrix, &method, cfg.orientation, &opts)?;
    Ok((human, outcome))
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<Written> {
    let (human, outcome) = loo(cfg, cfg.tau)?;
    let out = out_dir(cfg)?;
    io::write_json(&out.join("report.json"), &outcome.report)?;
    let mut csv = String::from(calibrate::EvalReport::csv_header());
    csv.push('\n');
    for row in outcome.report.csv_rows() {
        csv.push_str(&row);
        csv.push('\n');
    }
    io::write_text(&out.join("per_target.csv"), &csv)?;
    let preds = match cfg.orientation {
        Orientation::NewQuestion => outcome.predictions.clone(),
        Orientation::NewUser => outcome.predictions.transpose(),
    };
    io::write_dense(&out.join("predictions.csv"), &preds, &human.row_labels, &human.col_labels)?;
    Ok(Written {
        command: "calibrate",
        files: vec!["report.json".into(), "per_target.csv".into(), "predictions.csv".into()],
    })
}

pub fn cmd_eval_sweep(cfg: &RunConfig) -> Result<Written> {
    let (_, outcome) = loo(cfg, None)?;
    let taus = cfg.sweep.taus.clone().unwrap_or_else(calibrate::default_tau_grid);
    let sweep = calibrate::tau_sweep(&outcome.report, &taus)?;
    let out = out_dir(cfg)?;
    io::write_json(&out.join("sweep.json"), &sweep)?;
    let mut csv = String::from("tau,mean,se,transferred,pct_improvement\n");
    for p in &sweep.points {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            io::fmt_f64(p.tau),
            io::fmt_f64(p.mean),
            io::fmt_f64(p.se),
            io::fmt_f64(p.transferred),
            p.pct_improvement.map(io::fmt_f64).unwrap_or_else(|| "NA".into())
        ));
    }
    io::write_text(&out.join("sweep.csv"), &csv)?;
    io::write_json(&out.join("report.json"), &outcome.report)?;
    Ok(Written {
        command: "eval-sweep",
        files: vec!["sweep.json".into(), "sweep.csv".into(), "report.json".into()],
    })
}

#[derive(Debug, Serialize)]
struct DiagnoseOutput<'a> {
    alignment: &'a diagnostics::AlignmentReport,
    variance_explained_human: Vec<f64>,
    variance_explained_twin: Vec<f64>,
}

fn filled(m: &MaskedMatrix, rank: usize) -> Result<MaskedMatrix> {
    if m.is_fully_observed() {
        return Ok(m.clone());
    }
    let rank = rank.min(m.nrows().min(m.ncols()));
    MaskedMatrix::full(crate::completion::hard_impute(m, &CompletionConfig::hard(rank))?.filled)
}

pub fn cmd_diagnose(cfg: &RunConfig) -> Result<Written> {
    let (human, twin) = load_pair(cfg)?;
    let opts = diagnostics::AlignmentOptions {
        seed: cfg.seed,
        ..cfg.diagnose.alignment.clone()
    };
    let report = diagnostics::alignment_report(&human.matrix, &twin.matrix, cfg.axis(), &opts)?;
    let vh = diagnostics::variance_explained(&filled(&human.matrix, report.r)?)?;
    let vt = diagnostics::variance_explained(&filled(&twin.matrix, report.r)?)?;
    let out = out_dir(cfg)?;

    let mut cos = String::from("k,twin,gaussian,shuffled\n");
    for k in 0..report.r_max {
        cos.push_str(&format!(
            "{},{},{},{}\n",
            k + 1,
            io::fmt_f64(report.twin.cosines[k]),
            io::fmt_f64(report.gaussian.cosines[k]),
            io::fmt_f64(report.shuffled.cosines[k])
        ));
    }
    io::write_text(&out.join("cosines.csv"), &cos)?;
    let mut dist = String::from("k,twin,gaussian,shuffled\n");
    for k in 0..report.r_max {
        dist.push_str(&format!(
            "{},{},{},{}\n",
            k + 1,
            io::fmt_f64(report.twin.proj_frobenius[k]),
            io::fmt_f64(report.gaussian.proj_frobenius[k]),
            io::fmt_f64(report.shuffled.proj_frobenius[k])
        ));
    }
    io::write_text(&out.join("proj_frobenius.csv"), &dist)?;
    let mut ve = String::from("k,human,twin\n");
    for k in 0..vh.len().max(vt.len()) {
        let f = |v: &Vec<f64>| v.get(k).copied().map(io::fmt_f64).unwrap_or_else(|| "NA".into());
        ve.push_str(&format!("{},{},{}\n", k + 1, f(&vh), f(&vt)));
    }
    io::write_text(&out.join("variance_explained.csv"), &ve)?;
    io::write_json(
        &out.join("alignment.json"),
        &DiagnoseOutput {
            alignment: &report,
            variance_explained_human: vh,
            variance_explained_twin: vt,
        },
    )?;
    Ok(Written {
        command: "diagnose",
        files: vec![
            "alignment.json".into(),
            "cosines.csv".into(),
            "proj_frobenius.csv".into(),
            "variance_explained.csv".into(),
        ],
    })
}

#[derive(Debug, Serialize)]
struct SplitInfo<'a> {
    k: usize,
    n_twins: usize,
    n_questions: usize,
    train: &'a [usize],
    test: &'a [usize],
}

pub fn cmd_distcal(cfg: &RunConfig) -> Result<Written> {
    let d = &cfg.distcal;
    let (_, codes) = io::read_codes(required(&d.codes, "distcal.codes")?)?;
    let max_code = codes.iter().flatten().copied().max().unwrap_or(1);
    let truths: Vec<Categorical> = match (&d.human_marginals, &d.human_responses) {
        (Some(p), _) => io::read_marginals(p)?,
        (None, Some(p)) => {
            let k = d.k.unwrap_or(max_code);
            io::marginals_from_responses(&io::read_matrix(p)?.matrix, k)?
        }
        (None, None) => return Err(Error::param("distcal needs human_marginals or human_responses")),
    };
    let k = d.k.unwrap_or_else(|| truths.first().map_or(max_code, Categorical::k));
    if truths.len() != codes.len() {
        return Err(Error::dim(format!(
            "{} human distributions for {} twin questions",
            truths.len(),
            codes.len()
        )));
    }
    let panel = TwinPanel::from_codes(&codes, k)?;
    let m = codes.len();
    let (train, test) = match &d.test_questions {
        Some(test) => {
            if test.iter().any(|&j| j >= m) {
                return Err(Error::param("test question index out of range"));
            }
            let train: Vec<usize> = (0..m).filter(|j| !test.contains(j)).collect();
            (train, test.clone())
        }
        None => distcal::split_questions(m, d.test_frac, cfg.seed)?,
    };
    let mirror = distcal::MirrorDescentConfig {
        seed: cfg.seed,
        ..d.mirror.clone()
    };
    let table = distcal::cross_table(&truths, &panel, &train, &test, &mirror)?;
    let out = out_dir(cfg)?;
    io::write_text(&out.join("cross_table.csv"), &table.to_csv())?;
    io::write_json(&out.join("cross_table.json"), &table)?;
    io::write_json(
        &out.join("split.json"),
        &SplitInfo {
            k,
            n_twins: panel.n_twins(),
            n_questions: m,
            train: &train,
            test: &test,
        },
    )?;
    Ok(Written {
        command: "distcal",
        files: vec!["cross_table.csv".into(), "cross_table.json".into(), "split.json".into()],
    })
}

#[derive(Debug, Serialize)]
struct LatentSidecar<'a> {
    world: &'a synth::LatentWorld,
    target: Vec<f64>,
    row_inclusion_residual: f64,
    column_inclusion_residual: f64,
}

#[derive(Debug, Serialize)]
struct DiscreteSidecar<'a> {
    world: &'a synth::DiscreteWorld,
    train: Vec<usize>,
    test: Vec<usize>,
    twin_types: &'a [usize],
    reweighting_gap: f64,
    /// Distributional error bound per test question at alpha = 0.05.
    bound_alpha_05: Vec<f64>,
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<Written> {
    let out = out_dir(cfg)?;
    let files = match cfg.synth.kind {
        SynthKind::Latent => {
            let params = synth::LatentParams {
                seed: cfg.seed,
                orientation: cfg.orientation,
                ..cfg.synth.latent.clone()
            };
            let s = synth::generate_latent_world(&params)?;
            io::write_matrix(&out.join("human.csv"), &LabeledMatrix::unlabeled(s.human_with_target()))?;
            io::write_matrix(&out.join("human_masked.csv"), &LabeledMatrix::unlabeled(s.human.clone()))?;
            io::write_matrix(&out.join("twin.csv"), &LabeledMatrix::unlabeled(s.twin.clone()))?;
            io::write_json(
                &out.join("world.json"),
                &LatentSidecar {
                    world: &s.world,
                    target: s.target.iter().copied().collect(),
                    row_inclusion_residual: s.world.row_inclusion_residual(),
                    column_inclusion_residual: s.world.column_inclusion_residual(),
                },
            )?;
            let run = format!(
                "human = \"human.csv\"\ntwin = \"twin.csv\"\norientation = \"{}\"\nseed = {}\n",
                cfg.orientation.name(),
                cfg.seed
            );
            io::write_text(&out.join("run.toml"), &run)?;
            vec!["human.csv", "human_masked.csv", "twin.csv", "world.json", "run.toml"]
        }
        SynthKind::Discrete => {
            let params = synth::DiscreteParams {
                seed: cfg.seed,
                ..cfg.synth.discrete.clone()
            };
            let s = synth::generate_discrete_world(&params)?;
            let w = &s.world;
            io::write_codes(&out.join("codes.csv"), &s.codes)?;
            io::write_marginals(&out.join("human_marginals.csv"), &s.human)?;
            let bounds = (0..params.m_test)
                .map(|t| w.error_bound(t, 0.05))
                .collect::<Result<Vec<_>>>()?;
            io::write_json(
                &out.join("world.json"),
                &DiscreteSidecar {
                    world: w,
                    train: w.train_indices(),
                    test: w.test_indices(),
                    twin_types: &s.twin_types,
                    reweighting_gap: w.reweighting_gap()?,
                    bound_alpha_05: bounds,
                },
            )?;
            let test: Vec<String> = w.test_indices().iter().map(usize::to_string).collect();
            let run = format!(
                "seed = {}\n\n[distcal]\ncodes = \"codes.csv\"\nhuman_marginals = \"human_marginals.csv\"\nk = {}\ntest_questions = [{}]\n",
                cfg.seed,
                params.k,
                test.join(", ")
            );
            io::write_text(&out.join("run.toml"), &run)?;
            vec!["codes.csv", "human_marginals.csv", "world.json", "run.toml"]
        }
    };
    Ok(Written {
        command: "synth",
        files: files.into_iter().map(String::from).collect(),
    })
}
