//! Central finite-difference oracle for analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::ParamRegistry;

/// Which parameter coordinates to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coords {
    All,
    /// `count` coordinates drawn uniformly (with replacement) over every
    /// parameter element.
    Sample {
        count: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(name, flat index, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
    pub checked: usize,
    /// Coordinates skipped because `x - eps` and `x + eps` fall on
    /// different pieces of a clamp or maximum.
    pub straddled: usize,
}

pub const DEFAULT_FLOOR: f64 = 1e-12;

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    relative_error_floored(analytic, numeric, DEFAULT_FLOOR)
}

/// `|analytic - numeric| / max(|analytic|, |numeric|, floor)`
pub fn relative_error_floored(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Step, coordinates and denominator floor of a gradient check.
#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub eps: f64,
    pub coords: Coords,
    pub floor: f64,
}

impl GradCheck {
    pub fn new(eps: f64, coords: Coords) -> Self {
        GradCheck {
            eps,
            coords,
            floor: DEFAULT_FLOOR,
        }
    }

    pub fn floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    pub fn run<F>(&self, f: F, params: &ParamRegistry) -> Result<GradCheckReport>
    where
        F: Fn(&ParamRegistry, &mut Graph) -> Result<Var>,
    {
        check(f, params, self)
    }
}

/// Compares the gradients of `f` from [`Graph::backward`] against central
/// differences with step `eps`.
///
/// `f` binds `params` into the graph it is handed and returns the scalar
/// output. It must be deterministic; two evaluations at the unperturbed
/// point that disagree bitwise are reported as an oracle error.
pub fn finite_diff_check<F>(
    f: F,
    params: &ParamRegistry,
    eps: f64,
    coords: Coords,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamRegistry, &mut Graph) -> Result<Var>,
{
    check(f, params, &GradCheck::new(eps, coords))
}

fn check<F>(f: F, params: &ParamRegistry, settings: &GradCheck) -> Result<GradCheckReport>
where
    F: Fn(&ParamRegistry, &mut Graph) -> Result<Var>,
{
    let GradCheck { eps, coords, floor } = *settings;
    if !(floor > 0.0) {
        return Err(Error::contract(format!(
            "relative-error floor {floor} must be positive"
        )));
    }
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(Error::contract(format!(
            "finite-difference step {eps} outside (0, 1e-2]"
        )));
    }
    let eval = |p: &ParamRegistry| -> Result<(f64, u64)> {
        let mut g = Graph::new();
        let out = f(p, &mut g)?;
        Ok((g.value(out)?.item()?, g.piecewise_signature()))
    };

    let (base_a, piece) = eval(params)?;
    let (base_b, _) = eval(params)?;
    if base_a.to_bits() != base_b.to_bits() {
        return Err(Error::Oracle(format!(
            "function is not deterministic: {base_a:e} then {base_b:e}"
        )));
    }

    let mut g = Graph::new();
    let out = f(params, &mut g)?;
    let analytic = g.backward(out)?.into_named();

    let names: Vec<&str> = params.names().collect();
    let sizes: Vec<usize> = names
        .iter()
        .map(|n| params.get(n).map_or(0, |p| p.value.len()))
        .collect();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    match coords {
        Coords::All => {
            for (ni, &len) in sizes.iter().enumerate() {
                picks.extend((0..len).map(|i| (ni, i)));
            }
        }
        Coords::Sample { count, seed } => {
            let total: usize = sizes.iter().sum();
            if total == 0 {
                return Err(Error::contract("no parameters to check"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..count {
                let mut flat = rng.random_range(0..total);
                let mut ni = 0;
                while flat >= sizes[ni] {
                    flat -= sizes[ni];
                    ni += 1;
                }
                picks.push((ni, flat));
            }
        }
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        straddled: 0,
    };
    for (ni, idx) in picks {
        let name = names[ni];
        let a = analytic.get(name).map_or(0.0, |t| t.data()[idx]);
        let orig = work.value_mut(name)?.data_mut()[idx];
        work.value_mut(name)?.data_mut()[idx] = orig + eps;
        let (plus, piece_plus) = eval(&work)?;
        work.value_mut(name)?.data_mut()[idx] = orig - eps;
        let (minus, piece_minus) = eval(&work)?;
        work.value_mut(name)?.data_mut()[idx] = orig;
        if piece_plus != piece || piece_minus != piece {
            report.straddled += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error_floored(a, numeric, floor);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some((name.to_string(), idx, a, numeric));
        }
    }
    Ok(report)
}
