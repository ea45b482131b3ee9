//! Four-qubit statevector simulation of the swap and purification circuits,
//! used as an independent check of the Bell-diagonal maps.
//!
//! Qubit 0 is the most significant bit of the basis index. A Bell state on
//! qubits (x, y) is written over |xy>.

use num_complex::Complex64;

use crate::bell::BellDiagonal;

const DIM: usize = 16;
type State = [Complex64; DIM];

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn bit(index: usize, qubit: usize) -> usize {
    (index >> (3 - qubit)) & 1
}

/// Amplitudes of Bell state `k` (A, B, C, D order) over |00>, |01>, |10>, |11>.
fn bell_amplitudes(k: usize) -> [Complex64; 4] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    match k {
        0 => [c(h), c(0.0), c(0.0), c(h)],
        1 => [c(0.0), c(h), c(-h), c(0.0)],
        2 => [c(0.0), c(h), c(h), c(0.0)],
        3 => [c(h), c(0.0), c(0.0), c(-h)],
        _ => unreachable!("Bell index out of range"),
    }
}

/// `bell(i)` on qubits (0, 1) times `bell(j)` on qubits (2, 3).
fn product(i: usize, j: usize) -> State {
    let (l, r) = (bell_amplitudes(i), bell_amplitudes(j));
    let mut s = [c(0.0); DIM];
    for (idx, slot) in s.iter_mut().enumerate() {
        *slot = l[idx >> 2] * r[idx & 3];
    }
    s
}

fn apply_1q(s: &mut State, qubit: usize, u: [[Complex64; 2]; 2]) {
    let mask = 1 << (3 - qubit);
    for idx in 0..DIM {
        if idx & mask == 0 {
            let (a, b) = (s[idx], s[idx | mask]);
            s[idx] = u[0][0] * a + u[0][1] * b;
            s[idx | mask] = u[1][0] * a + u[1][1] * b;
        }
    }
}

fn cnot(s: &mut State, control: usize, target: usize) {
    let (cm, tm) = (1 << (3 - control), 1 << (3 - target));
    for idx in 0..DIM {
        if idx & cm != 0 && idx & tm == 0 {
            s.swap(idx, idx | tm);
        }
    }
}

fn hadamard() -> [[Complex64; 2]; 2] {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    [[c(h), c(h)], [c(h), c(-h)]]
}

fn rx(theta: f64) -> [[Complex64; 2]; 2] {
    let (co, si) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let m = Complex64::new(0.0, -si);
    [[c(co), m], [m, c(co)]]
}

fn pauli(k: usize) -> [[Complex64; 2]; 2] {
    let (o, z, i) = (c(1.0), c(0.0), Complex64::new(0.0, 1.0));
    match k {
        0 => [[o, z], [z, o]],
        1 => [[z, o], [o, z]],
        2 => [[o, z], [z, -o]],
        3 => [[z, -i], [i, z]],
        _ => unreachable!("Pauli index out of range"),
    }
}

/// Unnormalized two-qubit state on `(qa, qb)` after projecting the other two
/// qubits onto the bits `(ma, mb)`.
fn project(s: &State, keep: (usize, usize), measured: (usize, usize), outcome: (usize, usize)) -> [Complex64; 4] {
    let mut out = [c(0.0); 4];
    for (idx, amp) in s.iter().enumerate() {
        if bit(idx, measured.0) == outcome.0 && bit(idx, measured.1) == outcome.1 {
            out[bit(idx, keep.0) << 1 | bit(idx, keep.1)] += amp;
        }
    }
    out
}

fn apply_1q_pair(v: &[Complex64; 4], second: bool, u: [[Complex64; 2]; 2]) -> [Complex64; 4] {
    let mut out = [c(0.0); 4];
    for (idx, amp) in v.iter().enumerate() {
        let (x, y) = (idx >> 1, idx & 1);
        for n in 0..2 {
            if second {
                out[x << 1 | n] += u[n][y] * amp;
            } else {
                out[n << 1 | y] += u[n][x] * amp;
            }
        }
    }
    out
}

/// Bell-basis populations of a (possibly unnormalized) two-qubit vector.
fn bell_populations(v: &[Complex64; 4]) -> [f64; 4] {
    let mut p = [0.0; 4];
    for (k, slot) in p.iter_mut().enumerate() {
        let b = bell_amplitudes(k);
        let overlap: Complex64 = b.iter().zip(v).map(|(x, y)| x.conj() * y).sum();
        *slot = overlap.norm_sqr();
    }
    p
}

fn swap_circuit(i: usize, j: usize) -> State {
    let mut s = product(i, j);
    cnot(&mut s, 1, 2);
    apply_1q(&mut s, 1, hadamard());
    s
}

/// Pauli on qubit 3 that turns the outcome-`(a, b)` state of two ideal
/// input pairs back into the target state.
fn swap_corrections() -> [[usize; 2]; 2] {
    let ideal = swap_circuit(2, 2);
    let mut table = [[0; 2]; 2];
    for (a, row) in table.iter_mut().enumerate() {
        for (b, slot) in row.iter_mut().enumerate() {
            let v = project(&ideal, (0, 3), (1, 2), (a, b));
            *slot = (0..4)
                .find(|&k| {
                    let p = bell_populations(&apply_1q_pair(&v, true, pauli(k)));
                    (p[2] - 0.25).abs() < 1e-12
                })
                .expect("some Pauli restores the target state");
        }
    }
    table
}

/// Entanglement swap of `left` (qubits 0, 1) with `right` (qubits 2, 3) by
/// CNOT, Hadamard and measurement on the middle node, followed by the Pauli
/// correction on qubit 3.
pub fn circuit_oracle_swap(left: &BellDiagonal, right: &BellDiagonal) -> BellDiagonal {
    let table = swap_corrections();
    let mut out = [0.0; 4];
    for (i, pl) in left.coeffs().iter().enumerate() {
        for (j, pr) in right.coeffs().iter().enumerate() {
            if pl * pr == 0.0 {
                continue;
            }
            let s = swap_circuit(i, j);
            for (a, row) in table.iter().enumerate() {
                for (b, &k) in row.iter().enumerate() {
                    let v = apply_1q_pair(&project(&s, (0, 3), (1, 2), (a, b)), true, pauli(k));
                    for (o, p) in out.iter_mut().zip(bell_populations(&v)) {
                        *o += pl * pr * p;
                    }
                }
            }
        }
    }
    BellDiagonal::from_unnormalized(out).expect("swap output is a distribution")
}

/// Outcome of the purification circuit: success and failure probabilities
/// with the normalized output populations of each branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitPurification {
    pub p_success: f64,
    pub success: [f64; 4],
    pub p_fail: f64,
    pub fail: [f64; 4],
}

/// Purification of `pair1` (qubits 0, 1, kept) with `pair2` (qubits 2, 3):
/// Rx(pi/2) on the first node, Rx(-pi/2) on the second, bilateral CNOT and
/// Z measurement of qubits 2 and 3. Success when the outcomes coincide.
pub fn circuit_oracle_purify(pair1: &BellDiagonal, pair2: &BellDiagonal) -> CircuitPurification {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let (mut succ, mut fail) = ([0.0; 4], [0.0; 4]);
    for (i, p1) in pair1.coeffs().iter().enumerate() {
        for (j, p2) in pair2.coeffs().iter().enumerate() {
            if p1 * p2 == 0.0 {
                continue;
            }
            let mut s = product(i, j);
            apply_1q(&mut s, 0, rx(half_pi));
            apply_1q(&mut s, 2, rx(half_pi));
            apply_1q(&mut s, 1, rx(-half_pi));
            apply_1q(&mut s, 3, rx(-half_pi));
            cnot(&mut s, 0, 2);
            cnot(&mut s, 1, 3);
            for a in 0..2 {
                for b in 0..2 {
                    let pops = bell_populations(&project(&s, (0, 1), (2, 3), (a, b)));
                    let branch = if a == b { &mut succ } else { &mut fail };
                    for (o, p) in branch.iter_mut().zip(pops) {
                        *o += p1 * p2 * p;
                    }
                }
            }
        }
    }
    let (p_success, p_fail) = (succ.iter().sum::<f64>(), fail.iter().sum::<f64>());
    let norm = |v: [f64; 4], p: f64| if p > 0.0 { v.map(|x| x / p) } else { [0.0; 4] };
    CircuitPurification {
        p_success,
        success: norm(succ, p_success),
        p_fail,
        fail: norm(fail, p_fail),
    }
}
