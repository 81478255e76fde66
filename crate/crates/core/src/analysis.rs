//! System representation and controllability verdicts.

use crate::error::{invalid, Error, Result};
use crate::linalg::{
    condition_number, ensure_finite, krylov_block, matrix_exponential, null_left_witness, pseudo_inverse, rank,
    rank_with_tolerance, RealMatrix, RealVector,
};
use crate::quadrature::{integrate, QuadOptions};

/// Linear mean-field SDE
/// `dX = (A1 X + A2 E[X] + B1 u + B2 E[u]) dt + (C E[X] + D1 u + D2 E[u]) dW`
/// on `[0, T]` with state dimension `d` and control dimension `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldSystem {
    d: usize,
    n: usize,
    horizon: f64,
    pub a1: RealMatrix,
    pub a2: RealMatrix,
    pub b1: RealMatrix,
    pub b2: RealMatrix,
    pub c: RealMatrix,
    pub d1: RealMatrix,
    pub d2: RealMatrix,
}

fn check_shape(m: &RealMatrix, rows: usize, cols: usize, name: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(invalid(format!(
            "{name} must be {rows}×{cols}, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m, name)
}

fn check_horizon(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("horizon T must be positive and finite, got {t}")))
    }
}

impl MeanFieldSystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        horizon: f64,
        a1: RealMatrix,
        a2: RealMatrix,
        b1: RealMatrix,
        b2: RealMatrix,
        c: RealMatrix,
        d1: RealMatrix,
        d2: RealMatrix,
    ) -> Result<Self> {
        check_horizon(horizon)?;
        let d = a1.nrows();
        let n = b1.ncols();
        if d == 0 || n == 0 {
            return Err(invalid("state and control dimensions must be positive"));
        }
        check_shape(&a1, d, d, "A1")?;
        check_shape(&a2, d, d, "A2")?;
        check_shape(&b1, d, n, "B1")?;
        check_shape(&b2, d, n, "B2")?;
        check_shape(&c, d, d, "C")?;
        check_shape(&d1, d, n, "D1")?;
        check_shape(&d2, d, n, "D2")?;
        Ok(Self {
            d,
            n,
            horizon,
            a1,
            a2,
            b1,
            b2,
            c,
            d1,
            d2,
        })
    }

    /// All-zero system, to be filled in through [`SystemBuilder`].
    pub fn builder(d: usize, n: usize, horizon: f64) -> SystemBuilder {
        SystemBuilder {
            horizon,
            a1: RealMatrix::zeros(d, d),
            a2: RealMatrix::zeros(d, d),
            b1: RealMatrix::zeros(d, n),
            b2: RealMatrix::zeros(d, n),
            c: RealMatrix::zeros(d, d),
            d1: RealMatrix::zeros(d, n),
            d2: RealMatrix::zeros(d, n),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn control_dim(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `A1 + A2`, the generator of the mean dynamics.
    pub fn mean_generator(&self) -> RealMatrix {
        &self.a1 + &self.a2
    }

    /// `B1 + B2`, the control matrix of the mean dynamics.
    pub fn mean_input(&self) -> RealMatrix {
        &self.b1 + &self.b2
    }

    /// `D1 + D2`, the diffusion loading of a deterministic control.
    pub fn noise_input(&self) -> RealMatrix {
        &self.d1 + &self.d2
    }

    /// Re-validates after direct mutation of the public coefficient fields.
    pub fn validate(&self) -> Result<()> {
        Self::new(
            self.horizon,
            self.a1.clone(),
            self.a2.clone(),
            self.b1.clone(),
            self.b2.clone(),
            self.c.clone(),
            self.d1.clone(),
            self.d2.clone(),
        )
        .map(|_| ())
    }
}

#[derive(Debug, Clone)]
pub struct SystemBuilder {
    horizon: f64,
    a1: RealMatrix,
    a2: RealMatrix,
    b1: RealMatrix,
    b2: RealMatrix,
    c: RealMatrix,
    d1: RealMatrix,
    d2: RealMatrix,
}

impl SystemBuilder {
    pub fn a1(mut self, m: RealMatrix) -> Self {
        self.a1 = m;
        self
    }
    pub fn a2(mut self, m: RealMatrix) -> Self {
        self.a2 = m;
        self
    }
    pub fn b1(mut self, m: RealMatrix) -> Self {
        self.b1 = m;
        self
    }
    pub fn b2(mut self, m: RealMatrix) -> Self {
        self.b2 = m;
        self
    }
    pub fn c(mut self, m: RealMatrix) -> Self {
        self.c = m;
        self
    }
    pub fn d1(mut self, m: RealMatrix) -> Self {
        self.d1 = m;
        self
    }
    pub fn d2(mut self, m: RealMatrix) -> Self {
        self.d2 = m;
        self
    }
    pub fn build(self) -> Result<MeanFieldSystem> {
        MeanFieldSystem::new(
            self.horizon,
            self.a1,
            self.a2,
            self.b1,
            self.b2,
            self.c,
            self.d1,
            self.d2,
        )
    }
}

/// Mean-field SDE before the diffusion feedback has been absorbed:
/// `dX = (A1⁰X + A2⁰E[X] + B1u + B2E[u]) dt + (C1⁰X + C2⁰E[X] + D1u + D2E[u]) dW`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullSystem {
    pub horizon: f64,
    pub a1_0: RealMatrix,
    pub a2_0: RealMatrix,
    pub b1: RealMatrix,
    pub b2: RealMatrix,
    pub c1_0: RealMatrix,
    pub c2_0: RealMatrix,
    pub d1: RealMatrix,
    pub d2: RealMatrix,
}

impl FullSystem {
    fn validate(&self) -> Result<(usize, usize)> {
        check_horizon(self.horizon)?;
        let d = self.a1_0.nrows();
        let n = self.b1.ncols();
        if d == 0 || n == 0 {
            return Err(invalid("state and control dimensions must be positive"));
        }
        check_shape(&self.a1_0, d, d, "A1_0")?;
        check_shape(&self.a2_0, d, d, "A2_0")?;
        check_shape(&self.b1, d, n, "B1")?;
        check_shape(&self.b2, d, n, "B2")?;
        check_shape(&self.c1_0, d, d, "C1_0")?;
        check_shape(&self.c2_0, d, d, "C2_0")?;
        check_shape(&self.d1, d, n, "D1")?;
        check_shape(&self.d2, d, n, "D2")?;
        Ok((d, n))
    }
}

/// Result of absorbing `C1⁰X` into the control through `u = ũ − M X`.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub system: MeanFieldSystem,
    /// Minimum-norm solution of `D1 M = C1⁰`.
    pub gain: RealMatrix,
    /// `‖D1 M − C1⁰‖_F`.
    pub residual: f64,
}

fn hcat(left: &RealMatrix, right: &RealMatrix) -> RealMatrix {
    let mut out = RealMatrix::zeros(left.nrows(), left.ncols() + right.ncols());
    out.view_mut((0, 0), left.shape()).copy_from(left);
    out.view_mut((0, left.ncols()), right.shape()).copy_from(right);
    out
}

/// `Range(inner) ⊆ Range(outer)`, decided by comparing `rank([outer | inner])` with `rank(outer)`.
pub fn range_contained(inner: &RealMatrix, outer: &RealMatrix) -> Result<bool> {
    Ok(rank(&hcat(outer, inner))? == rank(outer)?)
}

pub fn reduce_full_system(f: &FullSystem) -> Result<Reduction> {
    f.validate()?;
    let rank_d1 = rank(&f.d1)?;
    if rank(&hcat(&f.d1, &f.c1_0))? != rank_d1 {
        // Report the first column that enlarges the range.
        for j in 0..f.c1_0.ncols() {
            let col = f.c1_0.column(j).into_owned();
            let colm = RealMatrix::from_column_slice(col.len(), 1, col.as_slice());
            if rank(&hcat(&f.d1, &colm))? != rank_d1 {
                return Err(Error::NotReducible {
                    column: j,
                    witness: col,
                });
            }
        }
        return Err(Error::NotReducible {
            column: 0,
            witness: f.c1_0.column(0).into_owned(),
        });
    }
    let gain = pseudo_inverse(&f.d1)? * &f.c1_0;
    let residual = (&f.d1 * &gain - &f.c1_0).norm();
    let scale = f.c1_0.norm();
    if residual > 1e-10 * scale.max(f64::MIN_POSITIVE) && scale > 0.0 {
        return Err(Error::Numeric(format!(
            "D1 M = C1_0 solved with residual {residual:e} (‖C1_0‖ = {scale:e})"
        )));
    }
    let system = MeanFieldSystem::new(
        f.horizon,
        &f.a1_0 - &f.b1 * &gain,
        &f.a2_0 - &f.b2 * &gain,
        f.b1.clone(),
        f.b2.clone(),
        &f.c2_0 - &f.d2 * &gain,
        f.d1.clone(),
        f.d2.clone(),
    )?;
    Ok(Reduction { system, gain, residual })
}

/// Dynamics of the pair (fluctuation, mean) = (X − E[X], E[X]).
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub abar: RealMatrix,
    pub bbar: RealMatrix,
    pub cbar: RealMatrix,
}

pub fn augment_system(sys: &MeanFieldSystem) -> AugmentedSystem {
    let d = sys.d;
    let n = sys.n;
    let mut abar = RealMatrix::zeros(2 * d, 2 * d);
    abar.view_mut((0, 0), (d, d)).copy_from(&sys.a1);
    abar.view_mut((d, d), (d, d)).copy_from(&sys.mean_generator());
    let mut bbar = RealMatrix::zeros(2 * d, 2 * n);
    bbar.view_mut((0, 0), (d, n)).copy_from(&sys.b1);
    bbar.view_mut((d, n), (d, n)).copy_from(&sys.mean_input());
    let mut cbar = RealMatrix::zeros(2 * d, 2 * d);
    cbar.view_mut((0, d), (d, d)).copy_from(&sys.c);
    AugmentedSystem { abar, bbar, cbar }
}

/// Which matrix an obstruction witness annihilates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessSource {
    D1,
    D1PlusD2,
    KalmanBlock,
}

impl WitnessSource {
    pub fn label(self) -> &'static str {
        match self {
            WitnessSource::D1 => "D1",
            WitnessSource::D1PlusD2 => "D1+D2",
            WitnessSource::KalmanBlock => "[D2|A1 D2|...]",
        }
    }
}

/// Verdict of the rank test `rank(D1) = rank(D1 + D2) = d`.
#[derive(Debug, Clone, PartialEq)]
pub struct L2Verdict {
    pub rank_d1: usize,
    pub rank_d1_plus_d2: usize,
    pub range_c_in_d1: bool,
    pub controllable: bool,
    /// The characterization assumes `Range(C) ⊆ Range(D1)`; without it the verdict is conditional.
    pub conditional: bool,
    pub witness: Option<RealVector>,
    pub witness_source: Option<WitnessSource>,
}

pub fn check_l2_terminal_controllability(sys: &MeanFieldSystem) -> Result<L2Verdict> {
    let d = sys.d;
    let rank_d1 = rank(&sys.d1)?;
    let sum = sys.noise_input();
    let rank_d1_plus_d2 = rank(&sum)?;
    let range_c_in_d1 = range_contained(&sys.c, &sys.d1)?;
    let controllable = rank_d1 == d && rank_d1_plus_d2 == d;
    let (witness, witness_source) = if controllable {
        (None, None)
    } else if rank_d1 < d {
        (null_left_witness(&sys.d1)?, Some(WitnessSource::D1))
    } else {
        (null_left_witness(&sum)?, Some(WitnessSource::D1PlusD2))
    };
    Ok(L2Verdict {
        rank_d1,
        rank_d1_plus_d2,
        range_c_in_d1,
        controllable,
        conditional: !range_c_in_d1,
        witness,
        witness_source,
    })
}

/// Verdict of the Kalman-type necessary condition and the full-rank sufficient condition
/// for exact terminal controllability to normal laws.
#[derive(Debug, Clone, PartialEq)]
pub struct EtcnlVerdict {
    pub rank_d2: usize,
    pub kalman_rank: usize,
    pub necessary: bool,
    pub sufficient: bool,
    pub range_c_in_d2: bool,
    pub conditional: bool,
    /// Set when `D1` or `B1` is non-zero: the conditions are stated for `D1 = B1 = 0`.
    pub structure_warning: Option<String>,
    /// Unit `a` with `a^* A1^k D2 = 0` for all `k` when the necessary condition fails.
    pub witness: Option<RealVector>,
}

/// `[D2 | A1 D2 | … | A1^{d−1} D2]`.
pub fn kalman_block(sys: &MeanFieldSystem) -> RealMatrix {
    krylov_block(&sys.a1, &sys.d2, sys.d - 1)
}

pub fn check_etcnl(sys: &MeanFieldSystem) -> Result<EtcnlVerdict> {
    let d = sys.d;
    let block = kalman_block(sys);
    let kalman_rank = rank(&block)?;
    let rank_d2 = rank(&sys.d2)?;
    let range_c_in_d2 = range_contained(&sys.c, &sys.d2)?;
    let necessary = kalman_rank == d;
    let sufficient = rank_d2 == d;
    let mut warnings = Vec::new();
    if sys.d1.iter().any(|&x| x != 0.0) {
        warnings.push("D1 is non-zero");
    }
    if sys.b1.iter().any(|&x| x != 0.0) {
        warnings.push("B1 is non-zero");
    }
    let structure_warning = (!warnings.is_empty()).then(|| {
        format!(
            "{}; the rank conditions are derived for D1 = B1 = 0",
            warnings.join(", ")
        )
    });
    let witness = if necessary { None } else { null_left_witness(&block)? };
    Ok(EtcnlVerdict {
        rank_d2,
        kalman_rank,
        necessary,
        sufficient,
        range_c_in_d2,
        conditional: !range_c_in_d2,
        structure_warning,
        witness,
    })
}

/// `∫_0^T e^{−tA} B B^* e^{−tA^*} dt` by adaptive quadrature.
pub fn deterministic_gramian(aeff: &RealMatrix, beff: &RealMatrix, horizon: f64, rel_tol: f64) -> Result<RealMatrix> {
    check_horizon(horizon)?;
    let d = aeff.nrows();
    check_shape(aeff, d, d, "Aeff")?;
    check_shape(beff, d, beff.ncols(), "Beff")?;
    if !(rel_tol > 0.0) {
        return Err(invalid("quadrature tolerance must be positive"));
    }
    let bbt = beff * beff.transpose();
    let neg = -aeff;
    let integrand = |t: f64| {
        let e = matrix_exponential(&neg, t).expect("validated generator");
        &e * &bbt * e.transpose()
    };
    // Fail early on overflow rather than panicking inside the integrand.
    matrix_exponential(&neg, horizon)?;
    let g = integrate(integrand, 0.0, horizon, QuadOptions::with_rel_tol(rel_tol))?.value;
    Ok((&g + g.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianVerdict {
    pub holds: bool,
    pub rank_b1: usize,
    pub gramian: RealMatrix,
    pub gramian_rank: usize,
    pub condition_number: Option<f64>,
    pub note: Option<String>,
}

/// Invertibility of the block `diag(B1, G2)` with `G2` the Gramian of `(A1 + A2, B1 + B2)`.
pub fn check_assumption_gramian(sys: &MeanFieldSystem) -> Result<GramianVerdict> {
    let d = sys.d;
    let rank_b1 = rank(&sys.b1)?;
    let gramian = deterministic_gramian(&sys.mean_generator(), &sys.mean_input(), sys.horizon, 1e-10)?;
    let info = rank_with_tolerance(&gramian, None)?;
    let gramian_rank = info.rank;
    let condition = condition_number(&gramian)?;
    let mut notes = Vec::new();
    if sys.n != d {
        notes.push(format!(
            "B1 is {d}×{} and a non-square diagonal block cannot be invertible",
            sys.n
        ));
    } else if rank_b1 < d {
        notes.push(format!("B1 has rank {rank_b1} < {d}"));
    }
    if gramian_rank < d {
        notes.push(format!("mean Gramian has rank {gramian_rank} < {d}"));
    }
    let holds = sys.n == d && rank_b1 == d && gramian_rank == d;
    Ok(GramianVerdict {
        holds,
        rank_b1,
        gramian,
        gramian_rank,
        condition_number: condition,
        note: (!notes.is_empty()).then(|| notes.join("; ")),
    })
}

/// All verdicts for one system.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllabilityReport {
    pub rank_d1: usize,
    pub rank_d1_plus_d2: usize,
    pub rank_d2: usize,
    pub kalman_rank: usize,
    pub l2_terminal_controllable: bool,
    pub l2_conditional: bool,
    pub etcnl_necessary: bool,
    pub etcnl_sufficient: bool,
    pub etcnl_conditional: bool,
    pub etcnl_structure_warning: Option<String>,
    pub assumption_gramian_holds: bool,
    pub range_c_in_d1: bool,
    pub range_c_in_d2: bool,
    /// Witness for the rank test; absent when that test passes.
    pub obstruction_witness: Option<RealVector>,
    pub obstruction_source: Option<WitnessSource>,
    /// Witness for the Kalman condition; absent when it holds.
    pub etcnl_witness: Option<RealVector>,
    pub gramian_condition_number: Option<f64>,
    pub gramian_note: Option<String>,
}

pub fn analyze(sys: &MeanFieldSystem) -> Result<ControllabilityReport> {
    let l2 = check_l2_terminal_controllability(sys)?;
    let et = check_etcnl(sys)?;
    let gr = check_assumption_gramian(sys)?;
    Ok(ControllabilityReport {
        rank_d1: l2.rank_d1,
        rank_d1_plus_d2: l2.rank_d1_plus_d2,
        rank_d2: et.rank_d2,
        kalman_rank: et.kalman_rank,
        l2_terminal_controllable: l2.controllable,
        l2_conditional: l2.conditional,
        etcnl_necessary: et.necessary,
        etcnl_sufficient: et.sufficient,
        etcnl_conditional: et.conditional,
        etcnl_structure_warning: et.structure_warning,
        assumption_gramian_holds: gr.holds,
        range_c_in_d1: l2.range_c_in_d1,
        range_c_in_d2: et.range_c_in_d2,
        obstruction_witness: l2.witness,
        obstruction_source: l2.witness_source,
        etcnl_witness: et.witness,
        gramian_condition_number: gr.condition_number,
        gramian_note: gr.note,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use proptest::prelude::*;

    fn scalar(x: f64) -> RealMatrix {
        RealMatrix::from_element(1, 1, x)
    }

    fn full_zero(d: usize, n: usize) -> FullSystem {
        FullSystem {
            horizon: 1.0,
            a1_0: RealMatrix::zeros(d, d),
            a2_0: RealMatrix::zeros(d, d),
            b1: RealMatrix::zeros(d, n),
            b2: RealMatrix::zeros(d, n),
            c1_0: RealMatrix::zeros(d, d),
            c2_0: RealMatrix::zeros(d, d),
            d1: RealMatrix::zeros(d, n),
            d2: RealMatrix::zeros(d, n),
        }
    }

    #[test]
    fn reduction_with_zero_c1_is_identity() {
        let mut f = full_zero(2, 2);
        f.a1_0 = dmatrix![1.0, 2.0; 3.0, 4.0];
        f.c2_0 = dmatrix![0.5, 0.0; 0.0, 0.5];
        f.d1 = RealMatrix::identity(2, 2);
        let r = reduce_full_system(&f).unwrap();
        assert_eq!(r.gain, RealMatrix::zeros(2, 2));
        assert_eq!(r.system.a1, f.a1_0);
        assert_eq!(r.system.c, f.c2_0);
    }

    #[test]
    fn reduction_scalar() {
        let mut f = full_zero(1, 1);
        f.d1 = scalar(2.0);
        f.c1_0 = scalar(4.0);
        f.b1 = scalar(1.0);
        f.a1_0 = scalar(1.0);
        let r = reduce_full_system(&f).unwrap();
        assert!((r.gain[(0, 0)] - 2.0).abs() < 1e-14);
        assert!((r.system.a1[(0, 0)] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn reduction_rejects_unreachable_row() {
        let mut f = full_zero(2, 1);
        f.d1 = dmatrix![1.0; 0.0];
        f.c1_0 = dmatrix![0.0, 0.0; 1.0, 0.0];
        match reduce_full_system(&f) {
            Err(Error::NotReducible { column, witness }) => {
                assert_eq!(column, 0);
                assert_eq!(witness, RealVector::from_vec(vec![0.0, 1.0]));
            }
            other => panic!("expected NotReducible, got {other:?}"),
        }
    }

    #[test]
    fn augmentation_blocks() {
        let sys = MeanFieldSystem::builder(1, 1, 1.0).a1(scalar(1.0)).build().unwrap();
        assert_eq!(augment_system(&sys).abar, RealMatrix::identity(2, 2));

        let sys = MeanFieldSystem::builder(1, 1, 1.0)
            .a1(scalar(1.0))
            .a2(scalar(2.0))
            .b1(scalar(1.0))
            .b2(scalar(3.0))
            .c(scalar(5.0))
            .build()
            .unwrap();
        let aug = augment_system(&sys);
        assert_eq!(aug.abar, dmatrix![1.0, 0.0; 0.0, 3.0]);
        assert_eq!(aug.bbar, dmatrix![1.0, 0.0; 0.0, 4.0]);
        assert_eq!(aug.cbar, dmatrix![0.0, 5.0; 0.0, 0.0]);
    }

    #[test]
    fn l2_hand_cases() {
        let sys = MeanFieldSystem::builder(1, 1, 1.0).d1(scalar(1.0)).build().unwrap();
        let v = check_l2_terminal_controllability(&sys).unwrap();
        assert!(v.controllable);
        assert!(v.witness.is_none());

        let sys = MeanFieldSystem::builder(2, 2, 1.0)
            .d1(dmatrix![1.0, 0.0; 0.0, 0.0])
            .build()
            .unwrap();
        let v = check_l2_terminal_controllability(&sys).unwrap();
        assert!(!v.controllable);
        assert_eq!(v.witness.unwrap(), RealVector::from_vec(vec![0.0, 1.0]));
        assert_eq!(v.witness_source, Some(WitnessSource::D1));

        let sys = MeanFieldSystem::builder(1, 1, 1.0)
            .d1(scalar(1.0))
            .d2(scalar(-1.0))
            .build()
            .unwrap();
        let v = check_l2_terminal_controllability(&sys).unwrap();
        assert!(!v.controllable);
        assert_eq!(v.rank_d1_plus_d2, 0);
        assert_eq!(v.witness.unwrap(), RealVector::from_vec(vec![1.0]));
        assert_eq!(v.witness_source, Some(WitnessSource::D1PlusD2));
    }

    #[test]
    fn l2_conditional_when_c_outside_d1() {
        let sys = MeanFieldSystem::builder(2, 1, 1.0)
            .d1(dmatrix![1.0; 0.0])
            .c(dmatrix![0.0, 0.0; 0.0, 1.0])
            .build()
            .unwrap();
        let v = check_l2_terminal_controllability(&sys).unwrap();
        assert!(v.conditional);
    }

    #[test]
    fn etcnl_examples() {
        let sys = MeanFieldSystem::builder(2, 1, 1.0)
            .a1(dmatrix![0.0, 1.0; 0.0, 0.0])
            .d2(dmatrix![0.0; 1.0])
            .build()
            .unwrap();
        let v = check_etcnl(&sys).unwrap();
        assert!(v.necessary);
        assert!(!v.sufficient);
        assert_eq!(v.kalman_rank, 2);

        let sys = MeanFieldSystem::builder(2, 1, 1.0)
            .d2(dmatrix![1.0; 0.0])
            .build()
            .unwrap();
        let v = check_etcnl(&sys).unwrap();
        assert!(!v.necessary);
        assert_eq!(v.witness.unwrap(), RealVector::from_vec(vec![0.0, 1.0]));

        let sys = MeanFieldSystem::builder(3, 3, 1.0)
            .a1(RealMatrix::from_fn(3, 3, |i, j| (i as f64) - 2.0 * j as f64))
            .d2(RealMatrix::identity(3, 3))
            .build()
            .unwrap();
        let v = check_etcnl(&sys).unwrap();
        assert!(v.necessary && v.sufficient);
        assert!(v.structure_warning.is_none());
    }

    #[test]
    fn etcnl_warns_on_d1() {
        let sys = MeanFieldSystem::builder(1, 1, 1.0)
            .d1(scalar(1.0))
            .d2(scalar(1.0))
            .build()
            .unwrap();
        assert!(check_etcnl(&sys).unwrap().structure_warning.is_some());
    }

    #[test]
    fn gramian_examples() {
        let g = deterministic_gramian(&RealMatrix::zeros(2, 2), &RealMatrix::identity(2, 2), 1.0, 1e-10).unwrap();
        assert!((g - RealMatrix::identity(2, 2)).amax() < 1e-14);

        let g = deterministic_gramian(&RealMatrix::zeros(2, 2), &dmatrix![1.0; 0.0], 1.0, 1e-10).unwrap();
        assert!((g - dmatrix![1.0, 0.0; 0.0, 0.0]).amax() < 1e-14);

        let g = deterministic_gramian(&scalar(1.0), &scalar(1.0), 1.0, 1e-10).unwrap();
        let exact = (1.0 - (-2.0f64).exp()) / 2.0;
        assert!((g[(0, 0)] - exact).abs() < 1e-10 * exact);
        assert!((g[(0, 0)] - 0.432_332_36).abs() < 1e-8);
    }

    #[test]
    fn gramian_assumption_examples() {
        let sys = MeanFieldSystem::builder(1, 1, 1.0).b1(scalar(1.0)).build().unwrap();
        let v = check_assumption_gramian(&sys).unwrap();
        assert!(v.holds);
        assert!((v.gramian[(0, 0)] - 1.0).abs() < 1e-14);

        let sys = MeanFieldSystem::builder(1, 1, 1.0).b2(scalar(1.0)).build().unwrap();
        assert!(!check_assumption_gramian(&sys).unwrap().holds);

        let sys = MeanFieldSystem::builder(1, 1, 1.0)
            .a1(scalar(0.7))
            .a2(scalar(-0.2))
            .b1(scalar(1.0))
            .b2(scalar(-1.0))
            .build()
            .unwrap();
        let v = check_assumption_gramian(&sys).unwrap();
        assert!(!v.holds);
        assert_eq!(v.gramian[(0, 0)], 0.0);
    }

    #[test]
    fn gramian_assumption_non_square_b1() {
        let sys = MeanFieldSystem::builder(1, 2, 1.0)
            .b1(dmatrix![1.0, 0.0])
            .build()
            .unwrap();
        let v = check_assumption_gramian(&sys).unwrap();
        assert!(!v.holds);
        assert!(v.note.unwrap().contains("non-square"));
    }

    #[test]
    fn system_validation() {
        let bad = MeanFieldSystem::builder(2, 1, 1.0).a1(RealMatrix::zeros(1, 1)).build();
        assert!(matches!(bad, Err(Error::InvalidInput(_))));
        assert!(MeanFieldSystem::builder(1, 1, 0.0).build().is_err());
        assert!(MeanFieldSystem::builder(1, 1, 1.0)
            .d1(scalar(f64::NAN))
            .build()
            .is_err());
    }

    fn mat(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = RealMatrix> {
        proptest::collection::vec(-range..range, rows * cols)
            .prop_map(move |v| RealMatrix::from_row_slice(rows, cols, &v))
    }

    /// Invertible matrix with condition number at most 100.
    fn well_conditioned(d: usize) -> impl Strategy<Value = RealMatrix> {
        (
            proptest::collection::vec(-1.0..1.0f64, d),
            proptest::collection::vec(-1.0..1.0f64, d),
            proptest::collection::vec(1.0..10.0f64, d),
        )
            .prop_map(move |(u, w, s)| {
                let reflect = |v: Vec<f64>| {
                    let v = RealVector::from_vec(v);
                    let n2 = v.norm_squared().max(1e-3);
                    RealMatrix::identity(d, d) - &v * v.transpose() * (2.0 / n2)
                };
                reflect(u) * RealMatrix::from_diagonal(&RealVector::from_vec(s)) * reflect(w)
            })
    }

    /// Rank-`r` d×d matrix `U diag(s) V` with nonzero singular values in [0.5, 2].
    fn low_rank(d: usize, r: usize, raw: &[f64]) -> RealMatrix {
        let reflect = |v: &[f64]| {
            let v = RealVector::from_column_slice(v);
            let n2 = v.norm_squared().max(1e-3);
            RealMatrix::identity(d, d) - &v * v.transpose() * (2.0 / n2)
        };
        let s: Vec<f64> = (0..d)
            .map(|i| if i < r { 1.25 + 0.75 * raw[2 * d + i] } else { 0.0 })
            .collect();
        reflect(&raw[..d]) * RealMatrix::from_diagonal(&RealVector::from_vec(s)) * reflect(&raw[d..2 * d])
    }

    /// Random system whose rank-controlled blocks have well-separated singular values.
    fn structured_system(d: usize) -> impl Strategy<Value = MeanFieldSystem> {
        (
            mat(d, d, 1.0),
            mat(d, d, 1.0),
            (0..=d, 0..=d, 0..=d),
            proptest::collection::vec(-1.0..1.0f64, 9 * d),
        )
            .prop_map(move |(a1, a2, (r1, r2, rb), raw)| {
                let d1 = low_rank(d, r1, &raw[..3 * d]);
                let d2 = low_rank(d, r2, &raw[3 * d..6 * d]);
                let b1 = low_rank(d, rb, &raw[6 * d..]);
                MeanFieldSystem::builder(d, d, 1.0)
                    .a1(a1)
                    .a2(a2)
                    .b1(b1.clone())
                    .b2(b1 * 0.5)
                    .d1(d1)
                    .d2(d2)
                    .build()
                    .unwrap()
            })
    }

    proptest! {
        #[test]
        fn kalman_rank_stabilizes(
            d in 1usize..=4,
            seed in proptest::collection::vec(-1.0..1.0f64, 32),
            r in 0usize..=2,
        ) {
            let a1 = RealMatrix::from_row_slice(d, d, &seed[..d * d]);
            let mut d2 = RealMatrix::from_row_slice(d, 1, &seed[16..16 + d]);
            if r == 0 { d2 *= 0.0; }
            let base = {
                let blk = krylov_block(&a1, &d2, d - 1);
                let smax = rank_with_tolerance(&blk, None).unwrap().singular_values[0];
                rank_with_tolerance(&blk, Some(1e-9 * smax.max(1e-300))).unwrap().rank
            };
            for m in d..=2 * d {
                let blk = krylov_block(&a1, &d2, m);
                let smax = rank_with_tolerance(&blk, None).unwrap().singular_values[0];
                let rk = rank_with_tolerance(&blk, Some(1e-9 * smax.max(1e-300))).unwrap().rank;
                prop_assert_eq!(rk, base);
            }
        }

        #[test]
        fn verdicts_invariant_under_similarity(
            (sys, s) in (1usize..=3).prop_flat_map(|d| (structured_system(d), well_conditioned(d))),
        ) {
            let d = sys.state_dim();
            let sinv = s.clone().try_inverse().unwrap();
            let t = MeanFieldSystem::builder(d, d, 1.0)
                .a1(&s * &sys.a1 * &sinv)
                .a2(&s * &sys.a2 * &sinv)
                .b1(&s * &sys.b1)
                .b2(&s * &sys.b2)
                .c(&s * &sys.c * &sinv)
                .d1(&s * &sys.d1)
                .d2(&s * &sys.d2)
                .build()
                .unwrap();
            let r1 = analyze(&sys).unwrap();
            let r2 = analyze(&t).unwrap();
            prop_assert_eq!(r1.l2_terminal_controllable, r2.l2_terminal_controllable);
            prop_assert_eq!(r1.etcnl_necessary, r2.etcnl_necessary);
            prop_assert_eq!(r1.etcnl_sufficient, r2.etcnl_sufficient);
            prop_assert_eq!(r1.assumption_gramian_holds, r2.assumption_gramian_holds);
            prop_assert_eq!(r1.range_c_in_d1, r2.range_c_in_d1);
            prop_assert_eq!(r1.range_c_in_d2, r2.range_c_in_d2);
        }

        #[test]
        fn gramian_is_symmetric_psd(a in mat(3, 3, 1.0), b in mat(3, 2, 1.0), t in 0.1..2.0f64) {
            let g = deterministic_gramian(&a, &b, t, 1e-10).unwrap();
            prop_assert!((&g - g.transpose()).amax() == 0.0);
            let ev = g.clone().symmetric_eigenvalues();
            let scale = ev.amax().max(1e-300);
            prop_assert!(ev.iter().all(|&l| l >= -1e-12 * scale));
        }

        #[test]
        fn gramian_zero_generator_is_t_bbt(b in mat(3, 2, 2.0), t in 0.1..5.0f64) {
            let g = deterministic_gramian(&RealMatrix::zeros(3, 3), &b, t, 1e-10).unwrap();
            let exact = &b * b.transpose() * t;
            prop_assert!((&g - &exact).norm() <= 1e-10 * exact.norm().max(1e-300));
        }
    }
}
