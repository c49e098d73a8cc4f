//! Variance schedules for the diffusion forward process.
//!
//! Three families are supported:
//!
//! * `L`  — the classic linear schedule, `beta_1 = 1e-4`, `beta_T = 0.02`.
//! * `LA` — an adapted linear schedule reaching `beta_T = 0.9999`, so the
//!   signal is fully perturbed even for very small step counts.
//! * `VP` — the variance-preserving schedule
//!   `beta_t = 1 - exp(-beta_min/T - 0.5 (beta_max - beta_min)(2t-1)/T^2)`.
//!   Its per-step exponents telescope to `(beta_min + beta_max)/2`
//!   regardless of `T`, so the total perturbation is step-count invariant.
//!
//! The VP exponent's first term exists in two published spellings; see
//! [`VpForm`]. All arithmetic is carried out in `f64`; consumers downcast
//! at the point of use.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Linear interpolation of beta between `beta_first` and `beta_last`.
    L,
    /// Linear schedule adapted to end at `beta_T = 0.9999`.
    La,
    /// Variance preserving.
    Vp,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScheduleKind::L => "l",
            ScheduleKind::La => "la",
            ScheduleKind::Vp => "vp",
        };
        f.write_str(s)
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l" => Ok(ScheduleKind::L),
            "la" => Ok(ScheduleKind::La),
            "vp" => Ok(ScheduleKind::Vp),
            other => Err(Error::Validation(format!(
                "unknown schedule kind '{other}' (expected l, la or vp)"
            ))),
        }
    }
}

/// Spelling of the VP exponent's first term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VpForm {
    /// `beta_min / T` per step. The per-step exponents then sum to
    /// `(beta_min + beta_max) / 2` for every `T`, which is what makes the
    /// schedule's total perturbation independent of the step count.
    #[default]
    TIndependent,
    /// `beta_min * t / T` per step, the formula's literal spelling as
    /// sometimes printed. The summed exponent grows with `T`, so total
    /// perturbation is no longer step-count invariant; kept selectable
    /// for comparison.
    Literal,
}

impl fmt::Display for VpForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            VpForm::TIndependent => "t-independent",
            VpForm::Literal => "literal",
        };
        f.write_str(s)
    }
}

impl FromStr for VpForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t-independent" | "t_independent" | "tindependent" => Ok(VpForm::TIndependent),
            "literal" => Ok(VpForm::Literal),
            other => Err(Error::Validation(format!(
                "unknown vp form '{other}' (expected t-independent or literal)"
            ))),
        }
    }
}

pub const DEFAULT_LINEAR_BETA_FIRST: f64 = 1e-4;
pub const DEFAULT_LINEAR_BETA_LAST: f64 = 0.02;
pub const DEFAULT_ADAPTED_BETA_LAST: f64 = 0.9999;
pub const DEFAULT_VP_BETA_MIN: f64 = 0.1;
pub const DEFAULT_VP_BETA_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub kind: ScheduleKind,
    pub num_steps: usize,
    /// First/last beta of the linear families (ignored for VP).
    pub beta_first: f64,
    pub beta_last: f64,
    /// VP exponent bounds (ignored for L/LA).
    pub beta_min: f64,
    pub beta_max: f64,
    pub vp_form: VpForm,
}

impl ScheduleParams {
    pub fn new(kind: ScheduleKind, num_steps: usize) -> Self {
        let (beta_first, beta_last) = match kind {
            ScheduleKind::L => (DEFAULT_LINEAR_BETA_FIRST, DEFAULT_LINEAR_BETA_LAST),
            ScheduleKind::La => (DEFAULT_LINEAR_BETA_FIRST, DEFAULT_ADAPTED_BETA_LAST),
            ScheduleKind::Vp => (DEFAULT_LINEAR_BETA_FIRST, DEFAULT_LINEAR_BETA_LAST),
        };
        Self {
            kind,
            num_steps,
            beta_first,
            beta_last,
            beta_min: DEFAULT_VP_BETA_MIN,
            beta_max: DEFAULT_VP_BETA_MAX,
            vp_form: VpForm::default(),
        }
    }

    pub fn linear(num_steps: usize) -> Self {
        Self::new(ScheduleKind::L, num_steps)
    }

    pub fn linear_adapted(num_steps: usize) -> Self {
        Self::new(ScheduleKind::La, num_steps)
    }

    pub fn variance_preserving(num_steps: usize) -> Self {
        Self::new(ScheduleKind::Vp, num_steps)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_steps < 1 {
            return Err(Error::Validation("num_steps must be >= 1".into()));
        }
        match self.kind {
            ScheduleKind::L | ScheduleKind::La => {
                for (name, v) in [("beta_first", self.beta_first), ("beta_last", self.beta_last)] {
                    if !(v > 0.0 && v < 1.0) {
                        return Err(Error::Validation(format!(
                            "{name} must lie in (0, 1), got {v}"
                        )));
                    }
                }
            }
            ScheduleKind::Vp => {
                if !(self.beta_min > 0.0 && self.beta_min < self.beta_max) {
                    return Err(Error::Validation(format!(
                        "need 0 < beta_min < beta_max, got {} and {}",
                        self.beta_min, self.beta_max
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Precomputed schedule constants, all `f64`, 1-based step indexing.
#[derive(Debug, Clone)]
pub struct Schedule {
    params: ScheduleParams,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    /// `alpha_bar[t]` for t in 0..=T, with `alpha_bar[0] = 1`.
    alpha_bar: Vec<f64>,
    /// `1 - alpha_bar[t]` computed by the cancellation-free recurrence
    /// `omab[t] = omab[t-1] * alpha[t] + beta[t]`, so `omab[1] == beta[1]`
    /// exactly.
    one_minus_alpha_bar: Vec<f64>,
    posterior_mean_coef_x0: Vec<f64>,
    posterior_mean_coef_xt: Vec<f64>,
    posterior_var: Vec<f64>,
}

impl Schedule {
    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn num_steps(&self) -> usize {
        self.params.num_steps
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check_step(t);
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.check_step(t);
        self.alpha[t - 1]
    }

    /// `alpha_bar(0) = 1`; valid for t in 0..=T.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.num_steps(), "step {t} out of range");
        self.alpha_bar[t]
    }

    pub fn one_minus_alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.num_steps(), "step {t} out of range");
        self.one_minus_alpha_bar[t]
    }

    pub fn posterior_mean_coef_x0(&self, t: usize) -> f64 {
        self.check_step(t);
        self.posterior_mean_coef_x0[t - 1]
    }

    pub fn posterior_mean_coef_xt(&self, t: usize) -> f64 {
        self.check_step(t);
        self.posterior_mean_coef_xt[t - 1]
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.check_step(t);
        self.posterior_var[t - 1]
    }

    fn check_step(&self, t: usize) {
        assert!(
            (1..=self.num_steps()).contains(&t),
            "step {t} out of range 1..={}",
            self.num_steps()
        );
    }
}

/// Builds the full constant set for the given parameters.
pub fn build_schedule(params: &ScheduleParams) -> Result<Schedule> {
    params.validate()?;
    let t_total = params.num_steps;

    let beta: Vec<f64> = (1..=t_total).map(|t| beta_at(params, t)).collect();
    for (i, &b) in beta.iter().enumerate() {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::Validation(format!(
                "derived beta[{}] = {b} outside (0, 1); parameters inconsistent",
                i + 1
            )));
        }
    }

    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();

    let mut alpha_bar = Vec::with_capacity(t_total + 1);
    let mut one_minus_alpha_bar = Vec::with_capacity(t_total + 1);
    alpha_bar.push(1.0);
    one_minus_alpha_bar.push(0.0);
    for t in 1..=t_total {
        alpha_bar.push(alpha_bar[t - 1] * alpha[t - 1]);
        one_minus_alpha_bar.push(one_minus_alpha_bar[t - 1] * alpha[t - 1] + beta[t - 1]);
    }

    let mut coef_x0 = Vec::with_capacity(t_total);
    let mut coef_xt = Vec::with_capacity(t_total);
    let mut post_var = Vec::with_capacity(t_total);
    for t in 1..=t_total {
        let omab_t = one_minus_alpha_bar[t];
        let omab_prev = one_minus_alpha_bar[t - 1];
        coef_x0.push(alpha_bar[t - 1].sqrt() * beta[t - 1] / omab_t);
        coef_xt.push(alpha[t - 1].sqrt() * omab_prev / omab_t);
        post_var.push(beta[t - 1] * omab_prev / omab_t);
    }

    Ok(Schedule {
        params: *params,
        beta,
        alpha,
        alpha_bar,
        one_minus_alpha_bar,
        posterior_mean_coef_x0: coef_x0,
        posterior_mean_coef_xt: coef_xt,
        posterior_var: post_var,
    })
}

fn beta_at(params: &ScheduleParams, t: usize) -> f64 {
    let t_total = params.num_steps;
    match params.kind {
        ScheduleKind::L | ScheduleKind::La => {
            if t_total == 1 {
                params.beta_last
            } else {
                let frac = (t - 1) as f64 / (t_total - 1) as f64;
                params.beta_first + frac * (params.beta_last - params.beta_first)
            }
        }
        ScheduleKind::Vp => {
            let tf = t as f64;
            let tt = t_total as f64;
            let first_term = match params.vp_form {
                VpForm::TIndependent => params.beta_min / tt,
                VpForm::Literal => params.beta_min * tf / tt,
            };
            let second_term =
                0.5 * (params.beta_max - params.beta_min) * (2.0 * tf - 1.0) / (tt * tt);
            1.0 - (-first_term - second_term).exp()
        }
    }
}

/// Writes `(kind, T, t, t_normalized, beta, alpha_bar)` rows for every
/// schedule and step, suitable for overlaying perturbation curves with the
/// per-schedule step index normalized to (0, 1].
pub fn export_curves(schedules: &[Schedule], path: &Path) -> Result<()> {
    if schedules.is_empty() {
        return Err(Error::Validation("no schedules to export".into()));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "kind,T,t,t_normalized,beta,alpha_bar")?;
    for s in schedules {
        let t_total = s.num_steps();
        for t in 1..=t_total {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                s.params().kind,
                t_total,
                t,
                t as f64 / t_total as f64,
                s.beta(t),
                s.alpha_bar(t)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

/// How strongly (and how early) a schedule perturbs the signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationReport {
    /// `alpha_bar` at the final step.
    pub alpha_bar_final: f64,
    /// Smallest t with `alpha_bar(t) < 0.01`, if any.
    pub first_step_below_1pct: Option<usize>,
    /// Whether `alpha_bar(T) < 1e-3`.
    pub fully_perturbed: bool,
}

pub fn perturbation_report(s: &Schedule) -> PerturbationReport {
    let t_total = s.num_steps();
    let alpha_bar_final = s.alpha_bar(t_total);
    let first_step_below_1pct = (1..=t_total).find(|&t| s.alpha_bar(t) < 0.01);
    PerturbationReport {
        alpha_bar_final,
        first_step_below_1pct,
        fully_perturbed: alpha_bar_final < 1e-3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Oracle route for VP: evaluate the exponent sums directly and
    // exponentiate, instead of multiplying (1 - beta_t) terms.
    fn vp_alpha_bar_oracle(beta_min: f64, beta_max: f64, t_total: usize, upto: usize) -> f64 {
        let tt = t_total as f64;
        let mut exponent = 0.0;
        for t in 1..=upto {
            let tf = t as f64;
            exponent += beta_min / tt + 0.5 * (beta_max - beta_min) * (2.0 * tf - 1.0) / (tt * tt);
        }
        (-exponent).exp()
    }

    #[test]
    fn vp_t2_matches_closed_form() {
        let s = build_schedule(&ScheduleParams::variance_preserving(2)).unwrap();
        // independent evaluation of the two exponents
        let e1: f64 = 0.1 / 2.0 + 0.5 * 19.9 * 1.0 / 4.0;
        let e2: f64 = 0.1 / 2.0 + 0.5 * 19.9 * 3.0 / 4.0;
        assert!((s.beta(1) - (1.0 - (-e1).exp())).abs() < 1e-15);
        assert!((s.beta(2) - (1.0 - (-e2).exp())).abs() < 1e-15);
        assert!((s.beta(1) - 0.921).abs() < 1e-4);
        assert!((s.beta(2) - 0.99945).abs() < 1e-5);
        assert!((s.alpha_bar(2) - 4.318e-5).abs() < 1e-8);
        assert!((s.alpha_bar(2) - vp_alpha_bar_oracle(0.1, 20.0, 2, 2)).abs() < 1e-12);
    }

    #[test]
    fn vp_final_alpha_bar_is_step_count_invariant() {
        let target = (-10.05f64).exp();
        for t_total in [2usize, 4, 8, 16, 64, 256, 1000] {
            let s = build_schedule(&ScheduleParams::variance_preserving(t_total)).unwrap();
            assert!(
                (s.alpha_bar(t_total) - target).abs() <= 1e-9,
                "T = {t_total}: {} vs {target}",
                s.alpha_bar(t_total)
            );
        }
    }

    #[test]
    fn vp_literal_form_grows_with_step_count() {
        let mut params = ScheduleParams::variance_preserving(100);
        params.vp_form = VpForm::Literal;
        let s = build_schedule(&params).unwrap();
        // literal form accumulates beta_min (T+1)/2 extra, so alpha_bar(T)
        // falls below the T-independent value
        let t_indep = (-10.05f64).exp();
        assert!(s.alpha_bar(100) < t_indep);
    }

    #[test]
    fn vp_forms_coincide_for_single_step() {
        let mut lit = ScheduleParams::variance_preserving(1);
        lit.vp_form = VpForm::Literal;
        let ind = ScheduleParams::variance_preserving(1);
        let s_lit = build_schedule(&lit).unwrap();
        let s_ind = build_schedule(&ind).unwrap();
        assert_eq!(s_lit.beta(1), s_ind.beta(1));
    }

    #[test]
    fn linear_t4_barely_perturbs() {
        let s = build_schedule(&ScheduleParams::linear(4)).unwrap();
        // oracle: product of the four linearly interpolated betas
        let betas = [1e-4, 1e-4 + 0.0199 / 3.0, 1e-4 + 2.0 * 0.0199 / 3.0, 0.02];
        let oracle: f64 = betas.iter().map(|b| 1.0 - b).product();
        assert!((s.alpha_bar(4) - oracle).abs() < 1e-12);
        assert!((s.alpha_bar(4) - 0.96029).abs() < 1e-4);
        assert!(s.alpha_bar(4) > 0.9);
        let report = perturbation_report(&s);
        assert!(!report.fully_perturbed);
    }

    #[test]
    fn adapted_linear_t4_fully_perturbs() {
        let s = build_schedule(&ScheduleParams::linear_adapted(4)).unwrap();
        let step = (0.9999 - 1e-4) / 3.0;
        let betas = [1e-4, 1e-4 + step, 1e-4 + 2.0 * step, 0.9999];
        for t in 1..=4 {
            assert!((s.beta(t) - betas[t - 1]).abs() < 1e-12);
        }
        let oracle: f64 = betas.iter().map(|b| 1.0 - b).product();
        assert!((s.alpha_bar(4) - oracle).abs() < 1e-15);
        assert!((s.alpha_bar(4) - 2.22e-5).abs() < 1e-6);
        assert!(perturbation_report(&s).fully_perturbed);
    }

    #[test]
    fn adapted_linear_degenerates_to_beta_last_for_t1() {
        let s = build_schedule(&ScheduleParams::linear_adapted(1)).unwrap();
        assert_eq!(s.beta(1), 0.9999);
        assert!(perturbation_report(&s).fully_perturbed);
    }

    #[test]
    fn linear_and_vp_agree_at_t1000() {
        let l = build_schedule(&ScheduleParams::linear(1000)).unwrap();
        let vp = build_schedule(&ScheduleParams::variance_preserving(1000)).unwrap();
        let max_gap = (1..=1000)
            .map(|t| (l.alpha_bar(t) - vp.alpha_bar(t)).abs())
            .fold(0.0f64, f64::max);
        assert!(max_gap <= 0.01, "max alpha_bar gap {max_gap}");
    }

    #[test]
    fn adapted_linear_t1000_perturbs_early() {
        let s = build_schedule(&ScheduleParams::linear_adapted(1000)).unwrap();
        let report = perturbation_report(&s);
        let first = report.first_step_below_1pct.expect("should reach < 0.01");
        assert!(
            (first as f64) < 0.2 * 1000.0,
            "reached 1% only at step {first}"
        );
    }

    #[test]
    fn alpha_bar_strictly_decreases_from_one() {
        for params in [
            ScheduleParams::linear(7),
            ScheduleParams::linear_adapted(7),
            ScheduleParams::variance_preserving(7),
        ] {
            let s = build_schedule(&params).unwrap();
            assert_eq!(s.alpha_bar(0), 1.0);
            for t in 1..=7 {
                assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn first_step_posterior_is_noiseless_identity() {
        for params in [
            ScheduleParams::linear(5),
            ScheduleParams::linear_adapted(5),
            ScheduleParams::variance_preserving(5),
        ] {
            let s = build_schedule(&params).unwrap();
            assert_eq!(s.posterior_var(1), 0.0);
            assert_eq!(s.posterior_mean_coef_x0(1), 1.0);
            assert_eq!(s.posterior_mean_coef_xt(1), 0.0);
        }
    }

    #[test]
    fn export_curves_row_contract() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        let s = build_schedule(&ScheduleParams::variance_preserving(2)).unwrap();
        export_curves(&[s], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "kind,T,t,t_normalized,beta,alpha_bar");
        assert!(lines[1].starts_with("vp,2,1,0.5,"));
        assert!(lines[2].starts_with("vp,2,2,1,"));
    }

    #[test]
    fn export_curves_rejects_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curves.csv");
        assert!(matches!(
            export_curves(&[], &path),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let mut p = ScheduleParams::linear(0);
        assert!(build_schedule(&p).is_err());
        p = ScheduleParams::linear(4);
        p.beta_last = 1.5;
        assert!(build_schedule(&p).is_err());
        p = ScheduleParams::variance_preserving(4);
        p.beta_min = 30.0;
        assert!(build_schedule(&p).is_err());
    }
}
