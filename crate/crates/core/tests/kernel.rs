use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use vcgp::oracle::{central_difference, mc_psi};
use vcgp::rng::{stream, Stream};
use vcgp::{kern, kernel_grads, psi0, psi1, psi2, GaussianInputDistribution, InducingSet, KernelParams, Statistic};

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn random_case(rng: &mut ChaCha8Rng) -> (GaussianInputDistribution, InducingSet, KernelParams) {
    let q = rng.gen_range(1..=3);
    let n = rng.gen_range(1..=4);
    let m = rng.gen_range(1..=3);
    let p = KernelParams::new(
        uniform(rng, 0.5, 2.0),
        (0..q).map(|_| uniform(rng, 0.6, 2.0)).collect(),
        1.0,
    )
    .unwrap();
    let mu = DMatrix::from_fn(n, q, |_, _| uniform(rng, -1.5, 1.5));
    let s = DMatrix::from_fn(n, q, |_, _| uniform(rng, 0.05, 1.0));
    let z = DMatrix::from_fn(m, q, |_, _| uniform(rng, -1.5, 1.5));
    (GaussianInputDistribution::latent(mu, s).unwrap(), InducingSet::new(z).unwrap(), p)
}

#[test]
fn one_dimensional_psi_values() {
    let p = KernelParams::new(1.0, vec![1.0], 1.0).unwrap();
    let q = GaussianInputDistribution::latent(DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0)).unwrap();
    let u = InducingSet::new(DMatrix::zeros(1, 1)).unwrap();
    // E[exp(−x²/2)] = 1/√2 and E[exp(−x²)] = 1/√3 for x ~ N(0, 1).
    assert!((psi1(&q, &u, &p).unwrap()[(0, 0)] - 0.5f64.sqrt()).abs() < 1e-12);
    assert!((psi2(&q, &u, &p).unwrap()[(0, 0)] - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
}

#[test]
fn psi0_is_n_times_signal_variance() {
    let p = KernelParams::new(0.7, vec![1.3, 0.4], 1.0).unwrap();
    let q = GaussianInputDistribution::latent(DMatrix::from_element(3, 2, 0.3), DMatrix::from_element(3, 2, 0.8)).unwrap();
    assert!((psi0(&q, &p).unwrap() - 2.1).abs() < 1e-12);
}

#[test]
fn psi1_and_psi2_match_monte_carlo_entrywise() {
    let mut rng = stream(11, Stream::Oracle);
    let (q, u, p) = random_case(&mut rng);
    let (n, m) = (q.n(), u.m());
    let mc = mc_psi(&q, &u.points, &p, &DMatrix::zeros(n, m), &DMatrix::zeros(m, m), 400_000, 5);
    let c1 = psi1(&q, &u, &p).unwrap();
    let c2 = psi2(&q, &u, &p).unwrap();
    for i in 0..n {
        for j in 0..m {
            assert!((c1[(i, j)] - mc.psi1[(i, j)]).abs() <= 4.0 * mc.psi1_se[(i, j)] + 1e-12);
        }
    }
    for a in 0..m {
        for b in 0..m {
            assert!((c2[(a, b)] - mc.psi2[(a, b)]).abs() <= 4.0 * mc.psi2_se[(a, b)] + 1e-12);
        }
    }
}

/// Central differences of a scalar projection of each statistic, one
/// parameter class at a time.
fn check_grads(which: Statistic, q: &GaussianInputDistribution, u: &InducingSet, p: &KernelParams, w: &DMatrix<f64>) {
    let value = |q: &GaussianInputDistribution, u: &InducingSet, p: &KernelParams| -> f64 {
        match which {
            Statistic::Kern => kern(&q.means, &u.points, p).unwrap().component_mul(w).sum(),
            Statistic::Psi0 => psi0(q, p).unwrap() * w[(0, 0)],
            Statistic::Psi1 => psi1(q, u, p).unwrap().component_mul(w).sum(),
            Statistic::Psi2 => psi2(q, u, p).unwrap().component_mul(w).sum(),
        }
    };
    let g = kernel_grads(which, q, u, p, w).unwrap();
    let close = |a: &[f64], b: &[f64], what: &str| {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-8);
        assert!(num / den < 1e-4, "{which:?} {what}: {a:?} vs {b:?}");
    };
    let sf = central_difference(
        |x| value(q, u, &KernelParams::new(x[0], p.lengthscales.clone(), p.noise_precision).unwrap()),
        &[p.signal_variance],
        1e-5,
    );
    close(&[g.signal_variance], &sf, "signal variance");
    let ls = central_difference(
        |x| value(q, u, &KernelParams::new(p.signal_variance, x.to_vec(), p.noise_precision).unwrap()),
        &p.lengthscales,
        1e-5,
    );
    close(g.lengthscales.as_slice(), &ls, "lengthscales");
    let (m, qd) = u.points.shape();
    let zt: Vec<f64> = u.points.transpose().iter().copied().collect();
    let dz = central_difference(
        |x| value(q, &InducingSet::new(DMatrix::from_row_slice(m, qd, x)).unwrap(), p),
        &zt,
        1e-5,
    );
    close(g.inducing.transpose().as_slice(), &dz, "inducing");
    let n = q.n();
    let mut_t: Vec<f64> = q.means.transpose().iter().copied().collect();
    let dm = central_difference(
        |x| {
            let qq = GaussianInputDistribution::latent(DMatrix::from_row_slice(n, qd, x), q.variances.clone()).unwrap();
            value(&qq, u, p)
        },
        &mut_t,
        1e-5,
    );
    close(g.means.transpose().as_slice(), &dm, "means");
    if which != Statistic::Kern {
        let st: Vec<f64> = q.variances.transpose().iter().copied().collect();
        let ds = central_difference(
            |x| {
                let qq = GaussianInputDistribution::latent(q.means.clone(), DMatrix::from_row_slice(n, qd, x)).unwrap();
                value(&qq, u, p)
            },
            &st,
            1e-6,
        );
        close(g.variances.transpose().as_slice(), &ds, "variances");
    }
}

#[test]
fn statistic_gradients_match_finite_differences() {
    let mut rng = stream(12, Stream::Oracle);
    for _ in 0..20 {
        let (q, u, p) = random_case(&mut rng);
        let (n, m) = (q.n(), u.m());
        let w1 = DMatrix::from_fn(n, m, |_, _| uniform(&mut rng, -1.0, 1.0));
        let w2 = DMatrix::from_fn(m, m, |_, _| uniform(&mut rng, -1.0, 1.0));
        check_grads(Statistic::Kern, &q, &u, &p, &w1);
        check_grads(Statistic::Psi0, &q, &u, &p, &DMatrix::from_element(1, 1, 0.7));
        check_grads(Statistic::Psi1, &q, &u, &p, &w1);
        check_grads(Statistic::Psi2, &q, &u, &p, &w2);
    }
}

fn arb_case() -> impl Strategy<Value = (GaussianInputDistribution, InducingSet, KernelParams)> {
    (1usize..=3, 1usize..=5, 1usize..=4).prop_flat_map(|(q, n, m)| {
        (
            prop::collection::vec(-2.0..2.0f64, n * q),
            prop::collection::vec(0.0..1.5f64, n * q),
            prop::collection::vec(-2.0..2.0f64, m * q),
            0.3..3.0f64,
            prop::collection::vec(0.3..3.0f64, q),
        )
            .prop_map(move |(mu, s, z, sf, ls)| {
                (
                    GaussianInputDistribution::latent(
                        DMatrix::from_row_slice(n, q, &mu),
                        DMatrix::from_row_slice(n, q, &s),
                    )
                    .unwrap(),
                    InducingSet::new(DMatrix::from_row_slice(m, q, &z)).unwrap(),
                    KernelParams::new(sf, ls, 1.0).unwrap(),
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_variance_reduces_to_kern((q, u, p) in arb_case()) {
        let q0 = GaussianInputDistribution::latent(q.means.clone(), DMatrix::zeros(q.n(), q.q())).unwrap();
        let k = kern(&q.means, &u.points, &p).unwrap();
        let p1 = psi1(&q0, &u, &p).unwrap();
        let p2 = psi2(&q0, &u, &p).unwrap();
        let kk = k.transpose() * &k;
        prop_assert!((&p1 - &k).amax() <= 1e-14 * p.signal_variance);
        prop_assert!((&p2 - &kk).amax() <= 1e-12 * kk.amax().max(1e-300));
    }

    #[test]
    fn psi2_is_symmetric_psd((q, u, p) in arb_case()) {
        let p2 = psi2(&q, &u, &p).unwrap();
        prop_assert!((&p2 - p2.transpose()).amax() <= 1e-14 * p2.amax().max(1e-300));
        let tr = p2.trace();
        let eig = p2.symmetric_eigenvalues();
        prop_assert!(eig.iter().all(|e| *e >= -1e-10 * tr));
    }

    #[test]
    fn psi1_bounded_by_signal_variance((q, u, p) in arb_case()) {
        let p1 = psi1(&q, &u, &p).unwrap();
        prop_assert!(p1.iter().all(|v| *v >= 0.0 && *v <= p.signal_variance * (1.0 + 1e-12)));
    }

    #[test]
    fn variance_flattens_a_centred_bump(
        (q, u, p) in arb_case(),
        row in 0usize..5, col in 0usize..3, bump in 0.01..2.0f64,
    ) {
        let (row, col) = (row % q.n(), col % q.q());
        // Put the mean of (row, col) on inducing point 0 in that dimension.
        let mut means = q.means.clone();
        means[(row, col)] = u.points[(0, col)];
        let before = GaussianInputDistribution::latent(means.clone(), q.variances.clone()).unwrap();
        let mut vars = q.variances.clone();
        vars[(row, col)] += bump;
        let after = GaussianInputDistribution::latent(means, vars).unwrap();
        let a = psi1(&before, &u, &p).unwrap()[(row, 0)];
        let b = psi1(&after, &u, &p).unwrap()[(row, 0)];
        prop_assert!(b <= a * (1.0 + 1e-12));
    }
}
