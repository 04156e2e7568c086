use super::{ModelDescriptor, ScalarVariant};
use crate::systems::{DisturbanceSet, FnField, SignAbsorbing, SystemModel};
use nalgebra::DMatrix;

/// The four scalar systems with D = ℝ:
/// (i) ẋ = |d|(x − x³), (ii) ẋ = d·x, (iii) ẋ = x/(|d|+1) + d·max(|x|−1, 0),
/// (iv) ẋ = x/(|d|+1).
pub fn build_scalar_example(variant: ScalarVariant) -> SystemModel {
    let desc = ModelDescriptor::Scalar { variant };
    let model = match variant {
        ScalarVariant::I => SystemModel::from_field(
            "scalar-i",
            FnField::new(1, |x, d, o| o[0] = d.abs() * (x[0] - x[0] * x[0] * x[0])),
            DisturbanceSet::Real,
        )
        .with_lipschitz_hint(|r, m| m * (3.0 * r * r - 1.0).max(1.0)),
        ScalarVariant::Ii => SystemModel::from_field(
            "scalar-ii",
            FnField::new(1, |x, d, o| o[0] = d * x[0]),
            DisturbanceSet::Real,
        )
        .with_lipschitz_hint(|_, m| m)
        .with_homogeneous(true),
        ScalarVariant::Iii => SystemModel::from_field(
            "scalar-iii",
            FnField::new(1, |x, d, o| o[0] = x[0] / (d.abs() + 1.0) + d * (x[0].abs() - 1.0).max(0.0)),
            DisturbanceSet::Real,
        )
        .with_lipschitz_hint(|_, m| 1.0 + m),
        ScalarVariant::Iv => SystemModel::from_field(
            "scalar-iv",
            FnField::new(1, |x, d, o| o[0] = x[0] / (d.abs() + 1.0)),
            DisturbanceSet::Real,
        )
        .with_lipschitz_hint(|_, _| 1.0)
        .with_homogeneous(true),
    };
    model.with_descriptor(desc)
}

/// `ẋ = A x` without disturbance, integrated by RK4.
pub fn build_linear(a: &DMatrix<f64>) -> SystemModel {
    let n = a.nrows();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| a.row(i).iter().copied().collect()).collect();
    let lip = crate::linalg::spectral_norm(a);
    let desc = ModelDescriptor::Linear { matrix: rows.clone() };
    SystemModel::from_field(
        format!("linear-{n}"),
        FnField::new(n, move |x, _, o| {
            for (i, row) in rows.iter().enumerate() {
                o[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
            }
        }),
        DisturbanceSet::Trivial,
    )
    .with_lipschitz_hint(move |_, _| lip)
    .with_homogeneous(true)
    .with_descriptor(desc)
}

fn cbrt_signed(v: f64) -> f64 {
    // f64::cbrt is odd and returns 0 at 0
    v.cbrt()
}

/// Planar system ẋ = d·x·y − x³ − x^{1/3}, ẏ = −y³ − y^{1/3}, D = ℝ.
/// The cube roots are not Lipschitz at 0; the hint covers the remaining
/// terms and is used for step selection only.
pub fn build_ugatt_example() -> SystemModel {
    SystemModel::from_field(
        "ugatt",
        SignAbsorbing(FnField::new(2, |z, d, o| {
            let (x, y) = (z[0], z[1]);
            o[0] = d * x * y - x * x * x - cbrt_signed(x);
            o[1] = -y * y * y - cbrt_signed(y);
        })),
        DisturbanceSet::Real,
    )
    .with_lipschitz_hint(|r, m| 2.0 * m * r + 3.0 * r * r + 1.0)
    .with_descriptor(ModelDescriptor::Ugatt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{flow, flow_final, DisturbanceSignal};
    use approx::assert_relative_eq;
    use nalgebra::DVector;

    fn one(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn closed_forms() {
        let c = |v| DisturbanceSignal::constant(v);
        let m = build_scalar_example(ScalarVariant::Ii);
        let (x, _) = flow_final(&m, 1.0, &one(1.0), &c(2.0), 1e-3).unwrap();
        assert_relative_eq!(x[0], 2f64.exp(), epsilon = 1e-7);
        let (x, _) = flow_final(&m, 1.0, &one(1.0), &c(1.0), 1e-3).unwrap();
        assert_relative_eq!(x[0], 1f64.exp(), epsilon = 1e-8);
        let m = build_scalar_example(ScalarVariant::Iv);
        let (x, _) = flow_final(&m, 1.0, &one(1.0), &c(0.0), 1e-3).unwrap();
        assert_relative_eq!(x[0], 1f64.exp(), epsilon = 1e-7);
        let m = build_scalar_example(ScalarVariant::I);
        let tr = flow(&m, 3.0, &one(0.0), &c(50.0), 1e-3).unwrap();
        assert!(tr.states.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn ugatt_origin_and_y_hitting() {
        let m = build_ugatt_example();
        let c = DisturbanceSignal::constant(3.0);
        let tr = flow(&m, 1.0, &DVector::zeros(2), &c, 1e-3).unwrap();
        assert!(tr.states.iter().all(|x| x.norm() == 0.0));
        let tr = flow(&m, 2.0, &DVector::from_vec(vec![0.0, 1.0]), &c, 1e-3).unwrap();
        let hit = tr.times.iter().zip(&tr.states).find(|(_, x)| x[1].abs() <= 1e-6).map(|(t, _)| *t);
        assert!(hit.is_some_and(|t| t < 2.0), "{hit:?}");
    }

    #[test]
    fn ugatt_transient_grows_with_disturbance() {
        let m = build_ugatt_example();
        let z0 = DVector::from_vec(vec![1.0, 1.0]);
        let peak = |k: f64| {
            flow(&m, 3.0, &z0, &DisturbanceSignal::constant(k), 1e-4)
                .unwrap()
                .states
                .iter()
                .fold(0.0_f64, |a, x| a.max(x[0].abs()))
        };
        let (p10, p100) = (peak(10.0), peak(100.0));
        assert!(p100 > p10 && p10 > 1.0, "{p10} {p100}");
    }
}
