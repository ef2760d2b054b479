//! Property tests against independent oracles: dense matrices for the
//! Pauli algebra, direct sums for the channel maps and brute-force
//! recomputation for the analysis layer.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use ntail::analysis::{awae, extrapolate, CurvePoint, Key, Table};
use ntail::channels::{depolarizing_fidelities, q_dnt, tailor_plan};
use ntail::circuit::{Circuit, Cnot, Gate, SingleQubitGate, C64};
use ntail::compiling::{dress_with, DressingChoice, Twirl};
use ntail::mitigation::{nec_circuit, nec_fidelity, nec_observable, optimize_target, TargetParams, TargetProblem};
use ntail::pauli::{
    clifford_conjugate, inverse_walsh_hadamard, num_paulis, walsh_hadamard, CliffordGate, FidelityVector, PauliString,
    ProbVector,
};
use ntail::simulator::{gate_matrix, pauli_matrix, run_channel, NoiseModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn as_gate(g: CliffordGate) -> Gate {
    let single = |qubit, op| Gate::Single { qubit, op };
    match g {
        CliffordGate::Cnot { control, target } => Gate::Cnot(Cnot {
            control,
            target,
            junction: "j".into(),
            neighbor: None,
        }),
        CliffordGate::H(q) => single(q, SingleQubitGate::H),
        CliffordGate::Rx90(q) => single(q, SingleQubitGate::Rx(FRAC_PI_2)),
        CliffordGate::Rz90(q) => single(q, SingleQubitGate::Rz(FRAC_PI_2)),
        CliffordGate::X(q) => single(q, SingleQubitGate::X),
        CliffordGate::Y(q) => single(q, SingleQubitGate::Y),
        CliffordGate::Z(q) => single(q, SingleQubitGate::Z),
    }
}

fn all_cliffords(n: usize) -> Vec<CliffordGate> {
    let mut v = Vec::new();
    for q in 0..n {
        v.extend([
            CliffordGate::H(q),
            CliffordGate::Rx90(q),
            CliffordGate::Rz90(q),
            CliffordGate::X(q),
            CliffordGate::Y(q),
            CliffordGate::Z(q),
        ]);
        for t in 0..n {
            if t != q {
                v.push(CliffordGate::Cnot { control: q, target: t });
            }
        }
    }
    v
}

#[test]
fn clifford_conjugation_matches_dense_matrices() {
    for n in 1..=3 {
        for g in all_cliffords(n) {
            let u = gate_matrix(n, &as_gate(g));
            for a in 0..num_paulis(n) {
                let p = PauliString::from_index(n, a).unwrap();
                let (out, sign) = clifford_conjugate(g, &p).unwrap();
                let lhs = &u * pauli_matrix(&p) * u.adjoint();
                let rhs = pauli_matrix(&out) * C64::new(sign as f64, 0.0);
                assert!((lhs - rhs).norm() < 1e-12, "{g:?} on {p}");
            }
        }
    }
}

fn prob_vector(q: usize, raw: &[f64], err: f64) -> ProbVector {
    let n = num_paulis(q);
    let w = &raw[..n - 1];
    let s: f64 = w.iter().sum::<f64>() + 1e-9;
    let mut p = vec![1.0 - err];
    p.extend(w.iter().map(|x| err * (x + 1e-9 / (n - 1) as f64) / s));
    ProbVector::new(q, p).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_roundtrip_and_normalization(q in 1usize..=3, raw in proptest::collection::vec(0.0f64..1.0, 64), err in 0.0f64..0.5) {
        let p = prob_vector(q, &raw, err);
        let f = inverse_walsh_hadamard(&p);
        prop_assert!((f.get(0) - 1.0).abs() < 1e-12);
        let back = walsh_hadamard(&f);
        for (x, y) in back.values().iter().zip(p.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn plan_gamma_and_composition(q in 2usize..=3, raw in proptest::collection::vec(0.0f64..1.0, 64), err in 0.0f64..0.1, lam in 0.0f64..0.005) {
        let gate = inverse_walsh_hadamard(&prob_vector(q, &raw, err));
        let target = depolarizing_fidelities(q, lam);
        let plan = tailor_plan(&gate, &target).unwrap();
        let neg: f64 = plan.quasi().iter().filter(|x| **x < 0.0).map(|x| -x).sum();
        prop_assert!(plan.gamma() >= 1.0 - 1e-12);
        prop_assert!((plan.gamma() - 1.0 - 2.0 * neg).abs() < 1e-12);
        prop_assert_eq!(neg == 0.0, (plan.gamma() - 1.0).abs() < 1e-15);
        let tailored = inverse_walsh_hadamard(&ProbVector::new(q, plan.quasi().to_vec()).unwrap());
        let composed = gate.compose(&tailored).unwrap();
        for (x, y) in composed.values().iter().zip(target.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        if q == 2 {
            let closed = q_dnt(&gate, 16.0 * lam).unwrap();
            for (x, y) in closed.quasi().iter().zip(plan.quasi()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn awae_is_permutation_invariant_and_linear(seed in 0u64..1000, c in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut refs = Table::new();
        let mut est = Table::new();
        let mut scaled = Table::new();
        for s in 1..=4 {
            for o in ["XII", "IYI", "IIZ"] {
                let k = Key::new(o, s);
                let r: f64 = rng.random_range(-1.0..1.0);
                let d: f64 = rng.random_range(-0.2..0.2);
                refs.insert(k.clone(), r);
                est.insert(k.clone(), r + d);
                scaled.insert(k, r + c * d);
            }
        }
        let z = awae(&est, &refs, None).unwrap();
        // Same entries relabelled in a shuffled order.
        let mut keys: Vec<Key> = refs.keys().cloned().collect();
        for i in (1..keys.len()).rev() {
            keys.swap(i, rng.random_range(0..=i));
        }
        let relabel: BTreeMap<&Key, Key> = refs.keys().zip(keys.iter()).map(|(a, b)| (a, b.clone())).collect();
        let perm = |t: &Table| -> Table { t.iter().map(|(k, v)| (relabel[k].clone(), *v)).collect() };
        prop_assert!((awae(&perm(&est), &perm(&refs), None).unwrap() - z).abs() < 1e-12);
        prop_assert!((awae(&scaled, &refs, None).unwrap() - c * z).abs() < 1e-12 * c.max(1.0));
    }

    #[test]
    fn dressed_circuits_are_logically_invisible(seed in 0u64..500) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = Circuit::new(3);
        for _ in 0..6 {
            let q = rng.random_range(0..3);
            c.ry(q, rng.random_range(-3.0..3.0));
            let (a, b) = [(0, 1), (1, 0), (1, 2), (2, 1)][rng.random_range(0..4)];
            let neighbor = [0, 1, 2].into_iter().find(|x| *x != a && *x != b);
            c.cnot(a, b, format!("j{}{}", a.min(b), a.max(b)), neighbor);
        }
        let d = dress_with(&c, Twirl::Crc, None, |_, _, _| DressingChoice {
            twirl: rng.random_range(0..16),
            neighbor_pauli: rng.random_range(0..4),
            neighbor_rot: rng.random_range(0..3),
            nt: 0,
        }).unwrap();
        let noiseless = NoiseModel::noiseless(3);
        let a = run_channel(&c, &noiseless).unwrap().to_matrix();
        let b = run_channel(&d.circuit, &noiseless).unwrap().to_matrix();
        prop_assert!((a - b).norm() < 1e-10);
    }
}

#[test]
fn extrapolation_covers_truth() {
    let (a, b) = (0.8, 0.03);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut covered = 0;
    for _ in 0..100 {
        let curve: Vec<CurvePoint> = (1..=10)
            .map(|k| {
                let n = 100 * k;
                let std = 0.004;
                let noise: f64 = (0..12).map(|_| rng.random::<f64>()).sum::<f64>() - 6.0;
                CurvePoint {
                    n,
                    zeta: a / (n as f64).sqrt() + b + std * noise,
                    std,
                    batches: 100 / k,
                }
            })
            .collect();
        let fit = extrapolate(&curve, 1000).unwrap();
        if (fit.b - b).abs() <= 2.0 * fit.b_std() && (fit.a - a).abs() <= 2.0 * fit.cov[0][0].sqrt() {
            covered += 1;
        }
    }
    assert!(covered >= 90, "covered {covered}/100");
}

fn sigma_on_grid(gate: &FidelityVector, circuit: &Circuit, obs: &PauliString) -> Vec<f64> {
    let nec = nec_circuit(circuit);
    let obs = nec_observable(&nec, obs).unwrap();
    let counts = circuit.edge_counts();
    (0..64)
        .map(|i| {
            let lam = i as f64 / 63.0 / 15.0;
            let target = depolarizing_fidelities(2, lam);
            let plan = tailor_plan(gate, &target).unwrap();
            let chans = counts.keys().map(|e| (e.clone(), target.clone())).collect();
            let model = NoiseModel::from_channels(circuit.n_qubits, &chans, &BTreeMap::new()).unwrap();
            let f = nec_fidelity(&nec, &model, &obs).unwrap();
            counts.values().map(|n| *n as f64 * plan.gamma().ln()).sum::<f64>() - f.ln()
        })
        .collect()
}

#[test]
fn sigma_minimum_is_interior_for_anisotropic_channels() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut c = Circuit::new(2);
    for k in 0..12 {
        c.ry(0, 0.3 + 0.1 * k as f64).cnot(0, 1, "j", None).rz(1, 0.4);
    }
    let obs: PauliString = "ZZ".parse().unwrap();
    let edge = c.edge_counts().keys().next().unwrap().clone();
    for _ in 0..20 {
        let err = rng.random_range(0.005..0.02);
        let raw: Vec<f64> = (0..16).map(|_| rng.random::<f64>().powi(4)).collect();
        let gate = inverse_walsh_hadamard(&prob_vector(2, &raw, err));
        let s = sigma_on_grid(&gate, &c, &obs);
        // Near lambda = 1/16 the NEC fidelity drops below double precision.
        let reliable = (0..64).filter(|i| (*i as f64) / 63.0 / 15.0 <= 1.0 / 32.0).count();
        assert!(s[..reliable].iter().all(|v| v.is_finite()));

        let gates = BTreeMap::from([(edge.clone(), gate.clone())]);
        let plan = optimize_target(&TargetProblem {
            gates: &gates,
            neighbors: &BTreeMap::new(),
            n_cnot: &c.edge_counts(),
            nec: &nec_circuit(&c),
            observable: &obs,
        })
        .unwrap();
        let TargetParams::Depolarizing { lambda } = plan.edges[0].target_params else {
            panic!("2-qubit junction must get a depolarizing target");
        };
        assert!(lambda > 0.0 && lambda < 1.0 / 15.0, "lambda {lambda}");
        assert!(plan.log_sigma < s[0] && plan.log_sigma < s[reliable - 1]);
        // gamma recomputed from the channel layer
        let g = tailor_plan(&gate, &depolarizing_fidelities(2, lambda)).unwrap().gamma();
        assert!((g - plan.edges[0].gamma).abs() < 1e-12);
    }
}

#[test]
fn dense_oracle_agrees_with_transfer_diagonal() {
    // A Pauli channel acts on P_b by f_b; check against explicit Kraus sums.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for q in 1..=3 {
        let p = prob_vector(q, &(0..64).map(|_| rng.random()).collect::<Vec<f64>>(), 0.2);
        let f = inverse_walsh_hadamard(&p);
        let mats: Vec<DMatrix<C64>> = (0..num_paulis(q)).map(|a| pauli_matrix(&PauliString::from_index(q, a).unwrap())).collect();
        let d = (1usize << q) as f64;
        for (b, pb) in mats.iter().enumerate() {
            let out = mats.iter().enumerate().fold(DMatrix::<C64>::zeros(pb.nrows(), pb.ncols()), |acc, (a, pa)| {
                acc + (pa * pb * pa).map(|z| z * p.get(a))
            });
            let fb = (pb * out).trace().re / d;
            assert!((fb - f.get(b)).abs() < 1e-12);
        }
    }
}
