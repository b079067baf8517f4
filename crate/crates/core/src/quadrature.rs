//! Fixed quadrature rules.

use std::f64::consts::PI;

const GL4_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL4_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_8,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_8,
];

/// Composite 4-point Gauss-Legendre rule on `(a, b)` with `panels` panels.
pub fn composite_gauss(a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / panels as f64;
    let mut out = Vec::with_capacity(4 * panels);
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for (x, w) in GL4_NODES.iter().zip(GL4_WEIGHTS.iter()) {
            out.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    out
}

/// Gauss-Hermite rule for the standard Gaussian measure: `∫ g dγ ≈ Σ w_k g(x_k)`.
///
/// Nodes come from Newton iteration on the orthonormal Hermite recurrence.
pub fn gauss_hermite_probabilists(n: usize) -> Vec<(f64, f64)> {
    let pim4 = PI.powf(-0.25);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * n as f64 + 1.0).sqrt() - 1.85575 * (2.0 * n as f64 + 1.0).powf(-0.16667),
            1 => z - 1.14 * (n as f64).powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                p1 = z * (2.0 / (j as f64 + 1.0)).sqrt() * p2 - (j as f64 / (j as f64 + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * n as f64).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        weights[i] = 2.0 / (pp * pp);
        weights[n - 1 - i] = weights[i];
    }
    // physicists' rule (weight e^{-x²}) mapped to the standard Gaussian
    let scale = 1.0 / PI.sqrt();
    let mut rule: Vec<(f64, f64)> = nodes
        .iter()
        .zip(weights.iter())
        .map(|(x, w)| (x * std::f64::consts::SQRT_2, w * scale))
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    rule
}
