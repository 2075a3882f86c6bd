//! Finite-difference checks of the hand-derived gradients of the fusion
//! operators.
//!
//! Each check contracts the operator output with a seeded random weight
//! tensor `W`, so the scalar loss is `L = Σ W ⊙ out` and `∂L/∂out = W`. The
//! analytic input gradients are then compared against central differences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::fusion::{self, FeatureLevel, ModalityFeatures, Modality, TextEmbeddings};
use crate::tensor::{self, Tensor};

pub const DEFAULT_STEP: f32 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
/// Fixtures for max-based operators keep operands at least this far apart,
/// so the finite-difference step never crosses the kink.
const KINK_MARGIN: f32 = 0.01;
const ROWS: usize = 4;
const COLS: usize = 3;

/// Central-difference gradient of a scalar function.
///
/// The divisor is the step actually taken in f32, `(x+h) − (x−h)`, rather
/// than the nominal `2h`.
pub fn finite_diff_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, h: f32) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let x0 = x.data()[i];
        let (hi, lo) = (x0 + h, x0 - h);
        probe.data_mut()[i] = hi;
        let fp = f(&probe);
        probe.data_mut()[i] = lo;
        let fm = f(&probe);
        probe.data_mut()[i] = x0;
        grad.data_mut()[i] = ((fp - fm) / (hi as f64 - lo as f64)) as f32;
    }
    grad
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or 0 when both vanish.
pub fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let norm = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v * v).sum::<f64>().sqrt();
    let a = analytic.data();
    let n = numeric.data();
    let diff = norm(&mut a.iter().zip(n).map(|(&x, &y)| x as f64 - y as f64));
    let scale = norm(&mut a.iter().map(|&v| v as f64)).max(norm(&mut n.iter().map(|&v| v as f64)));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// `Σ W ⊙ out`, accumulated in f64.
pub fn contract(w: &Tensor, out: &Tensor) -> f64 {
    w.data().iter().zip(out.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub operator: &'static str,
    pub input: &'static str,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub seed: u64,
    pub tolerance: f64,
    pub checks: Vec<GradCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Largest error per operator, in first-seen order.
    pub fn per_operator(&self) -> Vec<(&'static str, f64)> {
        let mut out: Vec<(&'static str, f64)> = Vec::new();
        for c in &self.checks {
            match out.iter_mut().find(|(op, _)| *op == c.operator) {
                Some((_, e)) => *e = e.max(c.max_rel_error),
                None => out.push((c.operator, c.max_rel_error)),
            }
        }
        out
    }
}

struct Suite {
    rng: ChaCha8Rng,
    corrupt: bool,
    tolerance: f64,
    checks: Vec<GradCheck>,
}

impl Suite {
    fn tensor(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::random(&[rows, cols], 1.0, &mut self.rng)
    }

    /// Loss weights for the analytic path; a negative control skews them.
    fn analytic_weights(&self, w: &Tensor) -> Tensor {
        if self.corrupt {
            w.scale(1.05)
        } else {
            w.clone()
        }
    }

    fn check(
        &mut self,
        operator: &'static str,
        input: &'static str,
        analytic: &Tensor,
        f: impl Fn(&Tensor) -> f64,
        x: &Tensor,
    ) {
        let numeric = finite_diff_grad(f, x, DEFAULT_STEP);
        let err = relative_error(analytic, &numeric);
        self.checks.push(GradCheck {
            operator,
            input,
            max_rel_error: err,
            passed: err <= self.tolerance,
        });
    }
}

/// Every pair of entries differs by more than the kink margin.
fn separated(a: &Tensor, b: &Tensor) -> bool {
    a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() > KINK_MARGIN)
}

fn level(t: &Tensor) -> Result<ModalityFeatures> {
    ModalityFeatures::new(Modality::Rgb, vec![FeatureLevel::new(1, t.rows(), t.clone())?])
}

fn text(t: &Tensor) -> Result<TextEmbeddings> {
    let classes: Vec<u64> = (1..=t.rows() as u64).collect();
    TextEmbeddings::new(t.clone(), &classes)
}

fn winner_split(g: &Tensor, mask: &Tensor) -> (Tensor, Tensor) {
    let pick = |want: f32| {
        let data = g
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| if m == want { v } else { 0.0 })
            .collect();
        Tensor::new(g.shape().to_vec(), data).expect("same shape")
    };
    (pick(0.0), pick(1.0))
}

fn check_fuse_visual(s: &mut Suite) -> Result<()> {
    let (a, b, w) = (s.tensor(ROWS, COLS), s.tensor(ROWS, COLS), s.tensor(ROWS, COLS));
    let g = s.analytic_weights(&w);
    let loss = |a: &Tensor, b: &Tensor| {
        let out = fusion::fuse_visual(&level(a).unwrap(), &level(b).unwrap()).unwrap();
        contract(&w, &out.levels[0].tokens)
    };
    s.check("fuse_visual", "rgb", &g, |x| loss(x, &b), &a);
    s.check("fuse_visual", "ir", &g, |x| loss(&a, x), &b);
    Ok(())
}

fn check_fuse_text(s: &mut Suite) -> Result<()> {
    let (a, b, w) = (s.tensor(ROWS, COLS), s.tensor(ROWS, COLS), s.tensor(2 * ROWS, COLS));
    let g = s.analytic_weights(&w).split_rows(&[ROWS, ROWS])?;
    let loss = |a: &Tensor, b: &Tensor| {
        contract(&w, &fusion::fuse_text(&text(a).unwrap(), &text(b).unwrap()).unwrap().tokens)
    };
    s.check("fuse_text", "rgb", &g[0], |x| loss(x, &b), &a);
    s.check("fuse_text", "ir", &g[1], |x| loss(&a, x), &b);
    Ok(())
}

fn check_affinity(s: &mut Suite) -> Result<()> {
    let (f, t, w) = (s.tensor(ROWS, COLS), s.tensor(ROWS, COLS), s.tensor(ROWS, ROWS));
    let g = s.analytic_weights(&w);
    let df = tensor::matmul(&g, &t)?;
    let dt = tensor::matmul(&g.transpose()?, &f)?;
    let loss = |f: &Tensor, t: &Tensor| {
        contract(&w, &fusion::affinity(&level(f).unwrap().levels[0], &text(t).unwrap()).unwrap())
    };
    s.check("affinity", "features", &df, |x| loss(x, &t), &f);
    s.check("affinity", "text", &dt, |x| loss(&f, x), &t);
    Ok(())
}

fn check_elementwise_max(s: &mut Suite) -> Result<()> {
    let (a, b) = loop {
        let (a, b) = (s.tensor(ROWS, COLS), s.tensor(ROWS, COLS));
        if separated(&a, &b) {
            break (a, b);
        }
    };
    let w = s.tensor(ROWS, COLS);
    let (_, mask) = tensor::elementwise_max(&a, &b)?;
    let (ga, gb) = winner_split(&s.analytic_weights(&w), &mask);
    let loss = |a: &Tensor, b: &Tensor| contract(&w, &tensor::elementwise_max(a, b).unwrap().0);
    s.check("elementwise_max", "rgb", &ga, |x| loss(x, &b), &a);
    s.check("elementwise_max", "ir", &gb, |x| loss(&a, x), &b);
    Ok(())
}

fn check_class_logits(s: &mut Suite) -> Result<()> {
    let (q, tr, ti) = loop {
        let (q, tr, ti) = (s.tensor(ROWS, COLS), s.tensor(ROWS, COLS), s.tensor(ROWS, COLS));
        if separated(&tensor::matmul_t(&q, &tr)?, &tensor::matmul_t(&q, &ti)?) {
            break (q, tr, ti);
        }
    };
    let w = s.tensor(ROWS, ROWS);
    let (_, mask) = tensor::elementwise_max(&tensor::matmul_t(&q, &tr)?, &tensor::matmul_t(&q, &ti)?)?;
    let (gr, gi) = winner_split(&s.analytic_weights(&w), &mask);
    let dq = tensor::matmul(&gr, &tr)?.add(&tensor::matmul(&gi, &ti)?)?;
    let dtr = tensor::matmul(&gr.transpose()?, &q)?;
    let dti = tensor::matmul(&gi.transpose()?, &q)?;
    let loss = |q: &Tensor, tr: &Tensor, ti: &Tensor| {
        contract(&w, &fusion::class_logits_query(q, &text(tr).unwrap(), &text(ti).unwrap()).unwrap())
    };
    s.check("class_logits_query", "queries", &dq, |x| loss(x, &tr, &ti), &q);
    s.check("class_logits_query", "text_rgb", &dtr, |x| loss(&q, x, &ti), &tr);
    s.check("class_logits_query", "text_ir", &dti, |x| loss(&q, &tr, x), &ti);
    Ok(())
}

/// Runs every check on seeded 4×3 fixtures. With `corrupt`, the analytic
/// path uses skewed loss weights and the suite is expected to fail.
pub fn run_gradcheck(seed: u64, corrupt: bool) -> Result<GradReport> {
    let mut s = Suite {
        rng: ChaCha8Rng::seed_from_u64(seed),
        corrupt,
        tolerance: DEFAULT_TOLERANCE,
        checks: Vec::new(),
    };
    check_fuse_visual(&mut s)?;
    check_fuse_text(&mut s)?;
    check_affinity(&mut s)?;
    check_elementwise_max(&mut s)?;
    check_class_logits(&mut s)?;
    Ok(GradReport {
        seed,
        tolerance: s.tolerance,
        checks: s.checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_examples() {
        let sq = |x: &Tensor| x.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>();
        let g = finite_diff_grad(sq, &Tensor::from_rows(&[[1.0, 2.0]]).unwrap(), 1e-3);
        assert!((g.data()[0] - 2.0).abs() < 1e-4 && (g.data()[1] - 4.0).abs() < 1e-4);

        let prod = |x: &Tensor| x.data()[0] as f64 * x.data()[1] as f64;
        let g = finite_diff_grad(prod, &Tensor::from_rows(&[[3.0, 5.0]]).unwrap(), 1e-3);
        assert!((g.data()[0] - 5.0).abs() < 1e-4 && (g.data()[1] - 3.0).abs() < 1e-4);

        let soft = |x: &Tensor| tensor::softmax_rows(x).unwrap().data().iter().map(|&v| v as f64).sum::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = finite_diff_grad(soft, &Tensor::random(&[3, 4], 1.0, &mut rng), 1e-3);
        assert!(g.data().iter().all(|v| v.abs() < 1e-4), "{g:?}");
    }

    #[test]
    fn relative_error_edge_cases() {
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(relative_error(&z, &z), 0.0);
        let one = Tensor::filled(&[2, 2], 1.0);
        assert_eq!(relative_error(&one, &z), 1.0);
    }

    #[test]
    fn suite_passes_and_control_fails() {
        for seed in 0..5 {
            let r = run_gradcheck(seed, false).unwrap();
            assert!(r.passed(), "{r:?}");
            assert_eq!(r.checks.len(), 11);
            assert!(!run_gradcheck(seed, true).unwrap().passed());
        }
        let ops: Vec<_> = run_gradcheck(0, false).unwrap().per_operator().into_iter().map(|p| p.0).collect();
        assert_eq!(
            ops,
            ["fuse_visual", "fuse_text", "affinity", "elementwise_max", "class_logits_query"]
        );
    }
}
