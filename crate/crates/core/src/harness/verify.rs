use std::io::Write;

use serde::Serialize;

use crate::theory::{
    analyze, check_branched_return_bound, check_lemmas, check_model_return_bound, generate_instance, BoundReport,
    InstanceConfig, LemmaReport,
};

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    pub count: usize,
    /// Instance `i` is generated from seed `seed + i`.
    pub seed: u64,
    pub ks: Vec<usize>,
    pub states: usize,
    pub actions: usize,
    pub lemmas: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            count: 200,
            seed: 0,
            ks: vec![1, 2, 3, 5],
            states: 16,
            actions: 3,
            lemmas: true,
        }
    }
}

/// Violation count and slack range of one inequality family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tally {
    pub checks: usize,
    pub violations: usize,
    pub min_slack: Option<f64>,
    pub max_slack: Option<f64>,
}

impl Tally {
    fn new() -> Self {
        Self {
            checks: 0,
            violations: 0,
            min_slack: None,
            max_slack: None,
        }
    }

    fn record(&mut self, slack: f64, pass: bool) {
        self.checks += 1;
        if !pass {
            self.violations += 1;
        }
        self.min_slack = Some(self.min_slack.map_or(slack, |m| m.min(slack)));
        self.max_slack = Some(self.max_slack.map_or(slack, |m| m.max(slack)));
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchTally {
    pub k: usize,
    #[serde(flatten)]
    pub tally: Tally,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaTally {
    pub name: &'static str,
    pub checks: usize,
    pub violations: usize,
    pub min_slack: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySummary {
    pub kind: &'static str,
    pub instances: usize,
    pub rejected_draws: usize,
    /// Stated-bound violations plus lemma violations.
    pub violations: usize,
    pub min_slack: Option<f64>,
    pub max_slack: Option<f64>,
    pub model_return: Tally,
    /// The model-return bound with K_π in its ε_m coefficient.
    pub corrected_model_return: Tally,
    pub branched_return: Vec<BranchTally>,
    /// Instances whose branched bound has an interior minimiser over k.
    pub k_star_instances: usize,
    /// Instances with both ε_m > 0 and ε_π > 0.
    pub both_errors_positive: usize,
    pub lemmas: Vec<LemmaTally>,
}

#[derive(Serialize)]
struct LemmaLine<'a> {
    kind: &'static str,
    #[serde(flatten)]
    report: &'a LemmaReport,
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<(), HarnessError> {
    serde_json::to_writer(&mut *out, value)?;
    out.write_all(b"\n").map_err(HarnessError::Stdout)
}

fn merge(a: Option<f64>, b: Option<f64>, f: fn(f64, f64) -> f64) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(f(x, y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Generates `count` instances and checks the model-return bound, the branched
/// bound for every `k` and (optionally) the intermediate inequalities. Every
/// report is written to `out` as one JSON line, followed by the summary line.
pub fn verify_theory(opts: &VerifyOptions, out: &mut dyn Write) -> Result<VerifySummary, HarnessError> {
    let cfg = InstanceConfig::with_sizes(opts.states, opts.actions)?;
    if opts.ks.contains(&0) {
        return Err(HarnessError::Config("branch lengths must be at least 1".into()));
    }
    let mut model = Tally::new();
    let mut corrected = Tally::new();
    let mut branched: Vec<BranchTally> = opts.ks.iter().map(|&k| BranchTally { k, tally: Tally::new() }).collect();
    let mut lemmas: Vec<LemmaTally> = Vec::new();
    let (mut rejected, mut k_star, mut both) = (0, 0, 0);

    for i in 0..opts.count {
        let (inst, r) = generate_instance(opts.seed.wrapping_add(i as u64), &cfg)?;
        rejected += r;
        let a = analyze(&inst)?;
        if a.eps_m > 0.0 && a.eps_pi > 0.0 {
            both += 1;
        }
        let rep = check_model_return_bound(&inst, &a)?;
        if let Some(s) = rep.slack {
            model.record(s, rep.pass);
        }
        if let (Some(b), Some(p)) = (rep.corrected_bound, rep.corrected_pass) {
            corrected.record(b - rep.difference, p);
        }
        emit(out, &rep)?;
        let mut has_k_star = false;
        for bt in &mut branched {
            let rep: BoundReport = check_branched_return_bound(&inst, &a, bt.k)?;
            if let Some(s) = rep.slack {
                bt.tally.record(s, rep.pass);
            }
            has_k_star |= rep.k_star.is_some();
            emit(out, &rep)?;
        }
        if has_k_star {
            k_star += 1;
        }
        if opts.lemmas {
            let rep = check_lemmas(&inst, &a)?;
            for c in &rep.checks {
                let slack = c.min_slack.is_finite().then_some(c.min_slack);
                match lemmas.iter_mut().find(|l| l.name == c.name) {
                    Some(l) => {
                        l.checks += c.checks;
                        l.violations += c.violations;
                        l.min_slack = merge(l.min_slack, slack, f64::min);
                    }
                    None => lemmas.push(LemmaTally {
                        name: c.name,
                        checks: c.checks,
                        violations: c.violations,
                        min_slack: slack,
                    }),
                }
            }
            emit(out, &LemmaLine { kind: "lemmas", report: &rep })?;
        }
    }

    let stated = std::iter::once(&model).chain(branched.iter().map(|b| &b.tally));
    let (mut min_slack, mut max_slack) = (None, None);
    let mut violations = lemmas.iter().map(|l| l.violations).sum::<usize>();
    for t in stated {
        violations += t.violations;
        min_slack = merge(min_slack, t.min_slack, f64::min);
        max_slack = merge(max_slack, t.max_slack, f64::max);
    }
    let summary = VerifySummary {
        kind: "summary",
        instances: opts.count,
        rejected_draws: rejected,
        violations,
        min_slack,
        max_slack,
        model_return: model,
        corrected_model_return: corrected,
        branched_return: branched,
        k_star_instances: k_star,
        both_errors_positive: both,
        lemmas,
    };
    emit(out, &summary)?;
    out.flush().map_err(HarnessError::Stdout)?;
    Ok(summary)
}
