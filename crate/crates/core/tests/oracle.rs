use proptest::prelude::*;
use soint_core::blackbox::{BlackBox, OracleBlackBox};
use soint_core::synth::{generate_dataset, sample_input, DatasetSpec, SyntheticEnergy};

// Reference energies written directly from the definitions, term by term.
fn e1_ref(x: &[f64], y: &[u8]) -> f64 {
    let (y1, y2) = (f64::from(y[0]), f64::from(y[1]));
    (x[0] * y1 + x[3]) * (1.0 - y2) + (x[1] * (1.0 - y1) + x[2]) * y2
}

fn e2_ref(x: &[f64], y: &[u8]) -> f64 {
    let y: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let a = (x[0].sin() * y[0] * y[2] + x[3].abs()) * (1.0 - y[1]) * y[3];
    let b = ((x[1] / 10.0 - 1.0).exp() * (1.0 - y[0]) * (1.0 - y[2]) + x[2]) * y[1] * (1.0 - y[3]);
    a + b
}

/// Collects every configuration, then keeps the minimum energy and, among
/// exact ties, the lexicographically smallest vector.
fn reference_argmin(d: usize, energy: impl Fn(&[u8]) -> f64) -> Vec<u8> {
    let mut all: Vec<Vec<u8>> = vec![vec![]];
    for _ in 0..d {
        all = all
            .into_iter()
            .flat_map(|p| {
                let mut a = p.clone();
                a.push(0);
                let mut b = p;
                b.push(1);
                [a, b]
            })
            .collect();
    }
    let best = all.iter().map(|y| energy(y)).fold(f64::INFINITY, f64::min);
    all.into_iter().filter(|y| energy(y) == best).min().unwrap()
}

#[test]
fn oracle_matches_reference_enumeration() {
    for (energy, reference) in
        [(SyntheticEnergy::E1, e1_ref as fn(&[f64], &[u8]) -> f64), (SyntheticEnergy::E2, e2_ref)]
    {
        let bb = OracleBlackBox::new(energy, 6).unwrap();
        let d = energy.output_dim();
        for row in 0..1000 {
            let x = sample_input(2024, row, 6);
            assert_eq!(bb.predict(&x).unwrap(), reference_argmin(d, |y| reference(&x, y)), "row {row}");
        }
    }
}

#[test]
fn oracle_tie_cases_follow_lexicographic_rule() {
    let ties: [[f64; 5]; 4] = [
        [0.0; 5],
        [0.0, 0.0, -2.0, 1.0, 0.0],
        [0.0, 1.0, 0.5, 0.5, 3.0],
        [1.0, -1.0, 0.0, 0.0, 0.0],
    ];
    for x in ties {
        for (energy, reference) in
            [(SyntheticEnergy::E1, e1_ref as fn(&[f64], &[u8]) -> f64), (SyntheticEnergy::E2, e2_ref)]
        {
            let bb = OracleBlackBox::new(energy, 5).unwrap();
            let want = reference_argmin(energy.output_dim(), |y| reference(&x, y));
            assert_eq!(bb.predict(&x).unwrap(), want, "{x:?}");
        }
    }
    let zero = OracleBlackBox::new(SyntheticEnergy::E1, 5).unwrap();
    assert_eq!(zero.predict(&[0.0; 5]).unwrap(), vec![0, 0]);
}

#[test]
fn analytic_spot_values() {
    assert_eq!(SyntheticEnergy::E1.eval(&[1.0, 2.0, 3.0, -1.0, 0.0], &[0, 0]).unwrap(), -1.0);
    for row in 0..100 {
        let x = sample_input(5, row, 7);
        assert_eq!(SyntheticEnergy::E2.eval(&x, &[0, 0, 0, 0]).unwrap(), 0.0);
    }
}

#[test]
fn dataset_inputs_are_standard_normal() {
    let spec = DatasetSpec { energy: SyntheticEnergy::E1, n: 4, num_samples: 5000, seed: 11 };
    let data = generate_dataset(&spec).unwrap();
    let values: Vec<f64> = data.inputs.iter().flatten().copied().collect();
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m;
    // 20000 draws: standard errors are about 0.007 (mean) and 0.01 (variance)
    assert!(mean.abs() < 0.03, "mean {mean}");
    assert!((var - 1.0).abs() < 0.05, "variance {var}");
}

#[test]
fn datasets_are_reproducible() {
    let spec = DatasetSpec { energy: SyntheticEnergy::E2, n: 6, num_samples: 50, seed: 3 };
    assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
    let other = DatasetSpec { seed: 4, ..spec };
    assert_ne!(generate_dataset(&spec).unwrap().inputs, generate_dataset(&other).unwrap().inputs);
}

fn any_output(d: usize) -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(0u8..=1, d)
}

proptest! {
    #[test]
    fn extra_features_never_change_energy(
        x in proptest::collection::vec(-4.0f64..4.0, 8),
        noise in proptest::collection::vec(-100.0f64..100.0, 4),
        y1 in any_output(2),
        y2 in any_output(4),
    ) {
        let mut z = x.clone();
        z[4..].copy_from_slice(&noise);
        prop_assert_eq!(SyntheticEnergy::E1.eval(&x, &y1).unwrap(), SyntheticEnergy::E1.eval(&z, &y1).unwrap());
        prop_assert_eq!(SyntheticEnergy::E2.eval(&x, &y2).unwrap(), SyntheticEnergy::E2.eval(&z, &y2).unwrap());
    }

    #[test]
    fn dataset_labels_are_minimal(seed in 0u64..1000, n in 4usize..9) {
        for energy in [SyntheticEnergy::E1, SyntheticEnergy::E2] {
            let data = generate_dataset(&DatasetSpec { energy, n, num_samples: 5, seed }).unwrap();
            for (x, y) in data.inputs.iter().zip(&data.outputs) {
                let e = energy.eval(x, y).unwrap();
                for code in 0..(1u64 << energy.output_dim()) {
                    let mut other = vec![0u8; energy.output_dim()];
                    soint_core::synth::decode_output(code, &mut other);
                    prop_assert!(e <= energy.eval(x, &other).unwrap());
                }
            }
        }
    }
}
