//! Norm inflation assembly: `||u(T)|| >= ||u_200(T)|| - ||u_1(T)|| - sum ||u_20l(T)|| - sum ||u_2l(T)|| - ||y(T)||`.

use lacuna::duhamel;
use lacuna::remainder::PicardLogRow;
use lacuna::NormBracket;

use crate::config::ExperimentConfig;
use crate::experiments::{self, heat, iterates, picard_config, solve_remainder, triebel_canonical, triebel_blocks};
use crate::output::{num, write_text, Chart, Series, Table};
use crate::{CliError, RunSummary};

/// Terms in assembly order; the first is the lower-bounded one.
pub const TERMS: [&str; 7] = ["u200", "u1", "u201", "u202", "u21", "u22", "y"];

#[derive(Clone, Debug, PartialEq)]
pub struct TermBracket {
    pub amplitude: f64,
    pub term: &'static str,
    pub lower: f64,
    pub upper: f64,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InflationRow {
    pub amplitude: f64,
    pub t: f64,
    pub u200_lower: f64,
    pub others_upper: f64,
    pub assembled_lower: f64,
    pub u0_upper: f64,
    pub ratio: f64,
    pub note: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct InflationReport {
    pub q_index: f64,
    pub terms: Vec<TermBracket>,
    pub rows: Vec<InflationRow>,
    /// Picard log per amplitude.
    pub picard: Vec<(f64, Vec<PicardLogRow>)>,
}

/// `u200.lower - sum(others.upper)`, floored at 0.
pub fn assemble(u200_lower: f64, others_upper: &[f64]) -> f64 {
    let s: f64 = others_upper.iter().sum();
    (u200_lower - s).max(0.0)
}

/// Evaluates every term at `T = config.horizon` for each amplitude and assembles the lower bound.
pub fn run_inflation(cfg: &ExperimentConfig) -> Result<InflationReport, CliError> {
    let mut rep = InflationReport { q_index: cfg.q_index, ..Default::default() };
    match run_into(cfg, &mut rep) {
        Ok(()) => Ok(rep),
        Err(e) => {
            // Flush what was computed before the failure.
            if emit_outputs(&rep, cfg).is_err() {
                return Err(e);
            }
            Err(e)
        }
    }
}

fn run_into(cfg: &ExperimentConfig, rep: &mut InflationReport) -> Result<(), CliError> {
    let t = cfg.horizon;
    let qi = cfg.q_index;
    for &q in &cfg.amplitudes {
        let params = cfg.params_for(q);
        if q == 0.0 {
            for term in TERMS {
                rep.terms.push(TermBracket { amplitude: q, term, lower: 0.0, upper: 0.0, note: "zero datum".into() });
            }
            rep.rows.push(InflationRow {
                amplitude: q,
                t,
                u200_lower: 0.0,
                others_upper: 0.0,
                assembled_lower: 0.0,
                u0_upper: 0.0,
                ratio: f64::NAN,
                note: "Q = 0: all norms vanish, ratio undefined".into(),
            });
            continue;
        }
        let u0 = experiments::build_u0(&params)?;
        let u0_canon = triebel_canonical(&u0, qi)?;
        let u0_blocks = triebel_blocks(&u0, &params, qi)?;
        let u0_upper = u0_canon.upper.min(u0_blocks.upper);

        let s20 = duhamel::split_u20(&params, t).map_err(CliError::compute)?;
        let s2 = duhamel::split_u2(&u0, &params, t).map_err(CliError::compute)?;
        let mut brackets: Vec<(&'static str, NormBracket)> = vec![
            ("u200", triebel_canonical(&s20.u200, qi)?),
            ("u1", triebel_canonical(&heat(&u0, t)?, qi)?),
            ("u201", triebel_canonical(&s20.u201, qi)?),
            ("u202", triebel_canonical(&s20.u202, qi)?),
            ("u21", triebel_canonical(&s2.u21, qi)?),
            ("u22", triebel_canonical(&s2.u22, qi)?),
        ];
        let mut note = String::new();
        if cfg.include_remainder {
            let it = iterates(&params, t, cfg.grid.ratio)?;
            let pc = picard_config(cfg);
            let (state, _) = solve_remainder(&it, &pc)?;
            if !state.converged {
                note = format!("Picard stopped at tol {} without converging; y bracket is the last iterate", cfg.tol);
            }
            brackets.push(("y", triebel_canonical(&state.y.value_at(t), qi)?));
            rep.picard.push((q, state.log));
        } else {
            brackets.push(("y", NormBracket::new(0.0, f64::INFINITY, "remainder not computed")));
            note = "remainder not computed: assembled value is not a bound".into();
        }
        for (term, b) in &brackets {
            rep.terms.push(TermBracket { amplitude: q, term, lower: b.lower, upper: b.upper, note: b.note.clone() });
        }
        let u200_lower = brackets[0].1.lower;
        let others: Vec<f64> = brackets[1..].iter().map(|(_, b)| b.upper).collect();
        let assembled = assemble(u200_lower, &others);
        let parts: f64 = brackets.iter().map(|(_, b)| b.upper).sum();
        if assembled > parts {
            return Err(CliError::Check(format!("Q = {q}: assembled lower {assembled} exceeds the sum of parts {parts}")));
        }
        rep.rows.push(InflationRow {
            amplitude: q,
            t,
            u200_lower,
            others_upper: others.iter().sum(),
            assembled_lower: assembled,
            u0_upper,
            ratio: assembled / u0_upper,
            note,
        });
    }
    Ok(())
}

pub fn emit_outputs(rep: &InflationReport, cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let dir = &cfg.output_dir;
    let mut sum = RunSummary::default();
    let mut terms = Table::new(&["amplitude", "term", "lower", "upper", "note"]);
    for b in &rep.terms {
        terms.push(vec![num(b.amplitude), b.term.into(), num(b.lower), num(b.upper), b.note.clone()]);
    }
    sum.files.push(terms.write(&dir.join("inflation_terms.csv"))?);
    let mut rows = Table::new(&[
        "amplitude",
        "t",
        "q_index",
        "u200_lower",
        "others_upper",
        "assembled_lower",
        "u0_upper",
        "ratio",
        "note",
    ]);
    for r in &rep.rows {
        rows.push(vec![
            num(r.amplitude),
            num(r.t),
            num(rep.q_index),
            num(r.u200_lower),
            num(r.others_upper),
            num(r.assembled_lower),
            num(r.u0_upper),
            num(r.ratio),
            r.note.clone(),
        ]);
    }
    sum.files.push(rows.write(&dir.join("inflation.csv"))?);
    let mut log = Table::new(&["amplitude", "n", "et_diff_upper", "packet_count", "dropped_mass", "contraction_ratio"]);
    for (q, l) in &rep.picard {
        for r in experiments::picard_log_table(l, Some(*q)).rows {
            log.push(r);
        }
    }
    sum.files.push(log.write(&dir.join("inflation_picard_log.csv"))?);
    if cfg.svg {
        let pts: Vec<(f64, f64)> = rep.rows.iter().map(|r| (r.amplitude, r.ratio)).collect();
        let chart = Chart {
            title: format!("assembled lower / ||u0|| upper, q = {}", rep.q_index),
            x_label: "Q".into(),
            y_label: "ratio".into(),
            log_x: false,
            log_y: false,
            series: vec![Series { name: "ratio".into(), points: pts }],
        };
        sum.files.push(write_text(&dir.join("inflation_ratio.svg"), &chart.render())?);
    }
    Ok(sum)
}
