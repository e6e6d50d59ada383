use approx::assert_relative_eq;
use memvisco_core::kernel::{contract, IsotropicRelaxationTensor, Sym3};
use memvisco_core::quadrature::gauss_legendre;
use memvisco_core::KernelSpec;
use proptest::prelude::*;

fn prony_strategy() -> impl Strategy<Value = KernelSpec> {
    (0.0..2.0f64, prop::collection::vec((0.05..3.0f64, 0.05..5.0f64), 1..4))
        .prop_map(|(g_inf, terms)| KernelSpec::prony(g_inf, &terms).unwrap())
}

fn power_strategy() -> impl Strategy<Value = KernelSpec> {
    (0.1..3.0f64, 0.05..0.95f64).prop_map(|(c, a)| KernelSpec::power_law(c, a).unwrap())
}

fn any_kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        prony_strategy(),
        power_strategy(),
        (prony_strategy(), power_strategy()).prop_map(|(a, b)| KernelSpec::sum(vec![a, b]).unwrap()),
        (0.1..5.0f64).prop_map(|g| KernelSpec::constant(g).unwrap()),
    ]
}

/// Composite Gauss-Legendre on `n` equal pieces.
fn quad(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (x, w) = gauss_legendre(12);
    let h = (b - a) / n as f64;
    (0..n)
        .map(|p| {
            let lo = a + p as f64 * h;
            x.iter().zip(&w).map(|(x, w)| w * h / 2.0 * f(lo + h / 2.0 * (x + 1.0))).sum::<f64>()
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sign_conditions_hold(k in any_kernel(), t in 1e-3..20.0f64) {
        prop_assert!(k.g(t).unwrap() > 0.0);
        prop_assert!(k.g_dot(t).unwrap() <= 0.0);
        prop_assert!(k.g_ddot(t).unwrap() >= 0.0);
    }

    #[test]
    fn integrated_kernel_is_increasing_and_concave(k in any_kernel(), a in 0.0..5.0f64, d in 1e-3..2.0f64) {
        let (k0, k1, k2) = (k.integrated(a).unwrap(), k.integrated(a + d).unwrap(), k.integrated(a + 2.0 * d).unwrap());
        prop_assert!(k1 > k0);
        prop_assert!(k2 - k1 <= (k1 - k0) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn integrated_kernel_matches_quadrature_of_g(k in any_kernel(), a in 0.01..3.0f64, d in 0.01..2.0f64) {
        let exact = k.integrated(a + d).unwrap() - k.integrated(a).unwrap();
        let q = quad(|t| k.g(t).unwrap(), a, a + d, 40);
        prop_assert!((exact - q).abs() <= 1e-9 * exact.abs().max(1.0));
    }

    #[test]
    fn derivatives_match_finite_differences(k in any_kernel(), t in 0.1..5.0f64) {
        let h = 1e-5 * t;
        let fd = (k.g(t + h).unwrap() - k.g(t - h).unwrap()) / (2.0 * h);
        let d = k.g_dot(t).unwrap();
        prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0));
        let fd2 = (k.g_dot(t + h).unwrap() - k.g_dot(t - h).unwrap()) / (2.0 * h);
        let d2 = k.g_ddot(t).unwrap();
        prop_assert!((fd2 - d2).abs() <= 1e-6 * d2.abs().max(1.0));
    }

    #[test]
    fn moments_match_quadrature(k in any_kernel(), order in -2i32..=3, x in 0.05..3.0f64, d in 1e-4..1.5f64) {
        let (i0, i1) = k.moments(order, x, d).unwrap();
        let q0 = quad(|y| k.primitive(order, y).unwrap(), x, x + d, 8);
        let q1 = quad(|y| k.primitive(order, y).unwrap() * (y - x), x, x + d, 8);
        prop_assert!((i0 - q0).abs() <= 1e-10 * q0.abs().max(1e-300) + 1e-14 * d, "{} vs {}", i0, q0);
        prop_assert!((i1 - q1).abs() <= 1e-10 * q1.abs().max(1e-300) + 1e-14 * d * d, "{} vs {}", i1, q1);
    }

    #[test]
    fn translated_kernel_relations(k in any_kernel(), eps in 1e-3..1.0f64, t in 0.0..5.0f64) {
        let tk = k.translate(eps).unwrap();
        prop_assert_eq!(tk.g(t).unwrap(), k.g(eps + t).unwrap());
        let direct = k.integrated(eps + t).unwrap() - k.integrated(eps).unwrap();
        prop_assert!((tk.integrated(t).unwrap() - direct).abs() <= 1e-12 * direct.abs().max(1.0));
        prop_assert!(tk.g(0.0).unwrap().is_finite());
    }

    #[test]
    fn kernel_difference_is_bounded_by_k_eps(k in any_kernel(), eps in 1e-3..1.0f64, s in 0.0..5.0f64) {
        let sup = k.integrated(eps).unwrap();
        let diff = k.kernel_difference(eps, s).unwrap();
        prop_assert!(diff <= 1e-14 * sup.max(1.0));
        prop_assert!(diff.abs() <= sup * (1.0 + 1e-12));
        let bound = k.kernel_diff_bound(eps, &[s]).unwrap()[0];
        prop_assert!(bound >= 0.0 && bound <= sup * (1.0 + 1e-12));
    }

    #[test]
    fn tensor_symmetry_and_coercivity(bulk in 0.1..5.0f64, shear in 0.1..5.0f64, e in prop::array::uniform6(-1.0..1.0f64)) {
        let tensor = IsotropicRelaxationTensor::new(KernelSpec::constant(bulk).unwrap(), KernelSpec::constant(shear).unwrap());
        for a in 0..3 { for b in 0..3 { for c in 0..3 { for d in 0..3 {
            let v = tensor.component(1.0, a, b, c, d).unwrap();
            prop_assert_eq!(v, tensor.component(1.0, c, d, a, b).unwrap());
            prop_assert_eq!(v, tensor.component(1.0, b, a, c, d).unwrap());
        }}}}
        let strain: Sym3 = [[e[0], e[3], e[4]], [e[3], e[1], e[5]], [e[4], e[5], e[2]]];
        let stress = tensor.apply(1.0, &strain).unwrap();
        let beta = tensor.coercivity(1.0).unwrap();
        prop_assert!(beta > 0.0);
        prop_assert!(contract(&stress, &strain) >= beta * contract(&strain, &strain) * (1.0 - 1e-12) - 1e-14);
    }
}

#[test]
fn power_law_difference_bound_is_two_sqrt_eps() {
    let k = KernelSpec::power_law(1.0, 0.5).unwrap();
    for eps in [0.1, 0.025, 0.1 / 64.0] {
        let b = k.kernel_diff_bound(eps, &[0.0, 0.3, 1.0]).unwrap();
        assert_relative_eq!(b[0], 2.0 * eps.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(k.integrated(eps).unwrap(), 2.0 * eps.sqrt(), epsilon = 1e-12);
        assert!(b[1] < b[0] && b[2] < b[1]);
    }
}

#[test]
fn exponential_difference_bound_closed_form() {
    let k = KernelSpec::prony(0.0, &[(1.0, 1.0)]).unwrap();
    for eps in [0.1, 0.003] {
        let s: Vec<f64> = (0..20).map(|i| i as f64 * 0.25).collect();
        for (si, b) in s.iter().zip(k.kernel_diff_bound(eps, &s).unwrap()) {
            let oracle = (-si).exp() * (1.0 - (-eps).exp());
            assert!((b - oracle).abs() <= 1e-12, "s = {si}: {b} vs {oracle}");
        }
    }
}
