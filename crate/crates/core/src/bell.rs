//! Bell-diagonal two-qubit states and the error channels acting on them.
//!
//! Coefficient order is (A, B, C, D) = (Φ⁺, Ψ⁻, Ψ⁺, Φ⁻). The target state of
//! the protocol is Ψ⁺, i.e. `c == 1`.

use crate::error::{ModelError, Result};

/// Index permutation pairing each Bell state with the one that differs by a
/// bit and a phase flip: A↔B, C↔D.
pub const BIT_PHASE_PARTNER: [usize; 4] = [1, 0, 3, 2];

/// Index permutation pairing each Bell state with the one that differs by a
/// phase flip: A↔D, B↔C.
pub const PHASE_PARTNER: [usize; 4] = [3, 2, 1, 0];

/// Index permutation pairing each Bell state with the one that differs by a
/// bit flip: A↔C, B↔D.
pub const BIT_PARTNER: [usize; 4] = [2, 3, 0, 1];

/// Tolerance for the normalization invariant.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Probabilities of the four Bell states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellDiagonal {
    coeffs: [f64; 4],
}

impl BellDiagonal {
    /// The target pair Ψ⁺.
    pub const IDEAL: BellDiagonal = BellDiagonal {
        coeffs: [0.0, 0.0, 1.0, 0.0],
    };

    pub const FULLY_MIXED: BellDiagonal = BellDiagonal {
        coeffs: [0.25; 4],
    };

    /// Validates a probability vector that is already normalized.
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Result<Self> {
        let coeffs = [a, b, c, d];
        let sum: f64 = coeffs.iter().sum();
        if coeffs.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > NORM_TOLERANCE {
            return Err(ModelError::NotNormalizable(coeffs));
        }
        Ok(Self { coeffs })
    }

    /// Clamps negative entries to zero and rescales to unit sum.
    ///
    /// Rounding in the closed-form channels leaves negatives of order 1e-16;
    /// the gate-error terms of the purification map can leave negatives of
    /// order `eps_TQG / 3` when the inputs carry no Φ⁻ weight.
    pub fn from_unnormalized(raw: [f64; 4]) -> Result<Self> {
        if raw.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NotNormalizable(raw));
        }
        let clamped = raw.map(|x| x.max(0.0));
        let sum: f64 = clamped.iter().sum();
        if sum <= 0.0 {
            return Err(ModelError::NotNormalizable(raw));
        }
        Ok(Self {
            coeffs: clamped.map(|x| x / sum),
        })
    }

    /// One-hot state on Bell index `index` (0..4).
    pub fn basis(index: usize) -> Self {
        let mut coeffs = [0.0; 4];
        coeffs[index] = 1.0;
        Self { coeffs }
    }

    pub fn coeffs(&self) -> [f64; 4] {
        self.coeffs
    }

    pub fn a(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn b(&self) -> f64 {
        self.coeffs[1]
    }

    pub fn c(&self) -> f64 {
        self.coeffs[2]
    }

    pub fn d(&self) -> f64 {
        self.coeffs[3]
    }

    pub fn fidelity(&self) -> f64 {
        self.c()
    }

    /// Initial state of the pairs of `n_links` links after phase errors on
    /// each of the `2 n_links` qubits with probability `eps_init`.
    pub fn from_initialization(eps_init: f64, n_links: u32) -> Self {
        let survive = (1.0 - 2.0 * eps_init).powi(2 * n_links as i32);
        Self::clamped([0.0, (1.0 - survive) / 2.0, (1.0 + survive) / 2.0, 0.0])
    }

    /// `n_gates` depolarizing two-qubit gates, each moving the state to each
    /// of the other three Bell states with probability `eps_gate / 3`.
    pub fn depolarize(&self, eps_gate: f64, n_gates: u32) -> Self {
        if n_gates == 0 {
            return *self;
        }
        let shrink = (1.0 - 4.0 * eps_gate / 3.0).powi(n_gates as i32);
        Self::clamped(self.coeffs.map(|x| 0.25 + (x - 0.25) * shrink))
    }

    /// Wrong Pauli-frame information from the `2 (n_links - 1)` measurements
    /// of the swap chain: every swap flips the bit frame with probability
    /// `eps_meas` and independently the phase frame with probability `eps_meas`.
    pub fn swap_measurement_errors(&self, eps_meas: f64, n_links: u32) -> Self {
        let swaps = n_links.saturating_sub(1) as i32;
        if swaps == 0 {
            return *self;
        }
        let single = (1.0 - 2.0 * eps_meas).powi(swaps);
        let double = single * single;
        let x = self.coeffs;
        let mut out = [0.0; 4];
        for i in 0..4 {
            let y = x[BIT_PHASE_PARTNER[i]];
            out[i] = x[i]
                + (x[i] + y - 0.5) / 2.0 * (double - 1.0)
                + (x[i] - y) / 2.0 * (single - 1.0);
        }
        Self::clamped(out)
    }

    /// Pure dephasing for `t_wait_s` with coherence time `t2_s`.
    pub fn dephase(&self, t_wait_s: f64, t2_s: f64) -> Self {
        let decay = (-t_wait_s / t2_s).exp();
        if decay == 1.0 {
            return *self;
        }
        let x = self.coeffs;
        let mut out = [0.0; 4];
        for i in 0..4 {
            let z = x[PHASE_PARTNER[i]];
            out[i] = (x[i] + z) / 2.0 + (x[i] - z) / 2.0 * decay;
        }
        Self::clamped(out)
    }

    /// Bit error rate measured in the X basis, and in the Z basis.
    pub fn quantum_bit_errors(&self) -> (f64, f64) {
        let [a, b, _, d] = self.coeffs;
        (b + d, a + d)
    }

    fn clamped(raw: [f64; 4]) -> Self {
        // Inputs here are convex combinations, so the sum is positive.
        Self::from_unnormalized(raw).expect("channel output is a probability vector")
    }
}

impl Default for BellDiagonal {
    fn default() -> Self {
        Self::IDEAL
    }
}

/// Combines the pairs of two neighbouring links by a Bell measurement in the
/// shared node; the Pauli errors of the two inputs multiply.
pub fn entanglement_swap(left: &BellDiagonal, right: &BellDiagonal) -> BellDiagonal {
    let [al, bl, cl, dl] = left.coeffs;
    let [ar, br, cr, dr] = right.coeffs;
    BellDiagonal::clamped([
        al * cr + cl * ar + bl * dr + dl * br,
        al * dr + dl * ar + bl * cr + cl * br,
        al * ar + bl * br + cl * cr + dl * dr,
        al * br + bl * ar + cl * dr + dl * cr,
    ])
}

/// Unnormalized success and failure branches of one purification attempt
/// before measurement errors. The coefficients of each branch sum to its
/// probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PurificationBranches {
    pub p_success: f64,
    pub success: [f64; 4],
    pub p_fail: f64,
    pub fail: [f64; 4],
}

/// Bilateral-CNOT purification of `pair1` (kept) with `pair2` (measured),
/// including the gate-error corrections of each branch.
pub fn purification_branches(
    pair1: &BellDiagonal,
    pair2: &BellDiagonal,
    eps_gate: f64,
) -> PurificationBranches {
    let [a1, b1, c1, d1] = pair1.coeffs;
    let [a2, b2, c2, d2] = pair2.coeffs;
    let g = eps_gate / 3.0;

    // Coincident parities.
    let both_flipped = (a1 + b1) * (a2 + b2);
    let both_unflipped = (c1 + d1) * (c2 + d2);
    let s = both_unflipped - both_flipped;
    let success = [
        a1 * a2 + b1 * b2 + g * s,
        c1 * d2 + d1 * c2 - g * s,
        c1 * c2 + d1 * d2 - g * s,
        a1 * b2 + b1 * a2 + g * s,
    ];

    // Mismatched parities.
    let flipped_first = (a1 + b1) * (c2 + d2);
    let flipped_second = (c1 + d1) * (a2 + b2);
    let f = flipped_second - flipped_first;
    let fail = [
        a1 * c2 + b1 * d2 + g * f,
        d1 * a2 + c1 * b2 - g * f,
        c1 * a2 + d1 * b2 - g * f,
        a1 * d2 + b1 * c2 + g * f,
    ];

    PurificationBranches {
        p_success: both_flipped + both_unflipped,
        success,
        p_fail: flipped_first + flipped_second,
        fail,
    }
}

/// Result of a heralded purification attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Purified {
    /// Probability that the two measurements are read as coinciding.
    pub p_measured: f64,
    /// State conditioned on a heralded success.
    pub state: BellDiagonal,
    /// Probability that the measured parities truly coincide.
    pub p_success_true: f64,
}

/// Probability of a heralded success, including measurement errors that
/// swap the success and failure branches.
pub fn heralded_success_probability(branches: &PurificationBranches, eps_meas: f64) -> f64 {
    let (w_s, w_f) = readout_weights(eps_meas);
    w_s * branches.p_success + w_f * branches.p_fail
}

fn readout_weights(eps_meas: f64) -> (f64, f64) {
    let keep = (1.0 - eps_meas).powi(2) + eps_meas * eps_meas;
    let swap = 2.0 * (1.0 - eps_meas) * eps_meas;
    (keep, swap)
}

/// Purifies `pair1` with `pair2` and returns the heralded output.
///
/// Fails with [`ModelError::DegeneratePurification`] when success can never
/// be heralded.
pub fn purify(
    pair1: &BellDiagonal,
    pair2: &BellDiagonal,
    eps_gate: f64,
    eps_meas: f64,
) -> Result<Purified> {
    let branches = purification_branches(pair1, pair2, eps_gate);
    let (p_measured, raw) = heralded_vector(&branches, eps_meas)?;
    Ok(Purified {
        p_measured,
        state: BellDiagonal::from_unnormalized(raw)?,
        p_success_true: branches.p_success,
    })
}

/// Heralded success probability and the heralded coefficients before
/// clamping. The gate-error terms can push a coefficient of a nearly pure
/// input slightly below zero; the vector still sums to one.
pub fn heralded_vector(branches: &PurificationBranches, eps_meas: f64) -> Result<(f64, [f64; 4])> {
    let (w_s, w_f) = readout_weights(eps_meas);
    let p_measured = w_s * branches.p_success + w_f * branches.p_fail;
    if p_measured <= 0.0 {
        return Err(ModelError::DegeneratePurification);
    }
    let mut raw = [0.0; 4];
    for (i, slot) in raw.iter_mut().enumerate() {
        *slot = (w_s * branches.success[i] + w_f * branches.fail[i]) / p_measured;
    }
    Ok((p_measured, raw))
}
