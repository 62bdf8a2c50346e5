//! Smooth scalar losses and their first derivatives with respect to the
//! prediction. All three are convex in the prediction `u`.

/// The supported loss families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// `(u - y)^2`, classification and regression.
    Square,
    /// `log(1 + exp(-y u))`, binary classification.
    Logistic,
    /// Piecewise-quadratic hinge in `z = y u`, binary classification.
    SmoothHinge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossSpec {
    pub kind: LossKind,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind }
    }

    /// Whether labels are required to be exactly -1 or +1.
    pub fn requires_binary_labels(&self) -> bool {
        !matches!(self.kind, LossKind::Square)
    }

    fn check_label(&self, y: f64) {
        if self.requires_binary_labels() {
            assert!(
                y == 1.0 || y == -1.0,
                "classification loss requires labels in {{-1,+1}}, got {y}"
            );
        }
    }

    /// `L(u, y)`.
    pub fn value(&self, u: f64, y: f64) -> f64 {
        self.check_label(y);
        match self.kind {
            LossKind::Square => (u - y) * (u - y),
            LossKind::Logistic => {
                // log(1 + exp(-z)) without overflow for large |z|.
                let z = y * u;
                if z > 0.0 {
                    (-z).exp().ln_1p()
                } else {
                    -z + z.exp().ln_1p()
                }
            }
            LossKind::SmoothHinge => {
                let z = y * u;
                if z <= 0.0 {
                    0.5 - z
                } else if z < 1.0 {
                    0.5 * (1.0 - z) * (1.0 - z)
                } else {
                    0.0
                }
            }
        }
    }

    /// `dL/du`. The logistic branch uses `-y * sigmoid(-y u)`, which stays
    /// finite for transiently large predictions.
    pub fn derivative(&self, u: f64, y: f64) -> f64 {
        self.check_label(y);
        match self.kind {
            LossKind::Square => 2.0 * (u - y),
            LossKind::Logistic => {
                let z = y * u;
                if z > 0.0 {
                    let e = (-z).exp();
                    -y * e / (1.0 + e)
                } else {
                    -y / (1.0 + z.exp())
                }
            }
            LossKind::SmoothHinge => {
                let z = y * u;
                if z <= 0.0 {
                    -y
                } else if z < 1.0 {
                    -y * (1.0 - z)
                } else {
                    0.0
                }
            }
        }
    }

    /// Uniform bound on `|dL/du|` where one exists. The square loss has no
    /// global bound; callers that need one supply a cap.
    pub fn derivative_bound(&self) -> Option<f64> {
        match self.kind {
            LossKind::Square => None,
            LossKind::Logistic | LossKind::SmoothHinge => Some(1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const KINDS: [LossKind; 3] = [LossKind::Square, LossKind::Logistic, LossKind::SmoothHinge];

    #[test]
    fn table_values() {
        let sq = LossSpec::new(LossKind::Square);
        assert_eq!(sq.value(1.0, 1.0), 0.0);
        assert_eq!(sq.derivative(2.0, 1.0), 2.0);

        let lg = LossSpec::new(LossKind::Logistic);
        assert!((lg.value(0.0, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((lg.derivative(0.0, 1.0) - (-0.5)).abs() < 1e-15);

        let sh = LossSpec::new(LossKind::SmoothHinge);
        // middle branch at z = 0.5
        assert!((sh.value(0.5, 1.0) - 0.125).abs() < 1e-15);
        // first branch at z = -1
        assert!((sh.value(-1.0, 1.0) - 1.5).abs() < 1e-15);
        // flat region
        assert_eq!(sh.derivative(2.0, 1.0), 0.0);
    }

    #[test]
    fn logistic_is_stable_for_large_predictions() {
        let lg = LossSpec::new(LossKind::Logistic);
        for &u in &[-1e3, -50.0, 50.0, 1e3] {
            for &y in &[-1.0, 1.0] {
                assert!(lg.value(u, y).is_finite());
                assert!(lg.derivative(u, y).is_finite());
            }
        }
    }

    /// Grid spacing 10/99 keeps every point at least 0.05 away from the
    /// smooth-hinge breakpoints z = 0 and z = 1, where a central difference
    /// of a piecewise function would see the curvature jump.
    fn grid() -> Vec<f64> {
        (0..100).map(|k| -5.0 + k as f64 * (10.0 / 99.0)).collect()
    }

    #[test]
    fn finite_difference_matches_derivative() {
        let h = 1e-4;
        for kind in KINDS {
            let spec = LossSpec::new(kind);
            for &y in &[-1.0, 1.0] {
                for &u in &grid() {
                    let fd = (spec.value(u + h, y) - spec.value(u - h, y)) / (2.0 * h);
                    let d = spec.derivative(u, y);
                    assert!(
                        (fd - d).abs() <= 10.0 * h * h + 1e-8,
                        "{kind:?} y={y} u={u}: fd={fd} d={d}"
                    );
                }
            }
        }
    }

    #[test]
    fn bounded_losses_respect_derivative_bound() {
        for kind in [LossKind::Logistic, LossKind::SmoothHinge] {
            let spec = LossSpec::new(kind);
            let m = spec.derivative_bound().unwrap();
            for &y in &[-1.0, 1.0] {
                for &u in &grid() {
                    assert!(spec.derivative(u, y).abs() <= m);
                }
            }
        }
        assert!(LossSpec::new(LossKind::Square).derivative_bound().is_none());
    }

    #[test]
    fn smooth_hinge_derivative_is_continuous_at_breakpoints() {
        let sh = LossSpec::new(LossKind::SmoothHinge);
        for &y in &[-1.0f64, 1.0] {
            // z = y*u = 0 -> u = 0; z = 1 -> u = y.
            let left0: f64 = -y;
            let right0: f64 = -y * (1.0 - 0.0);
            assert!((left0 - right0).abs() <= 1e-12);
            let left1: f64 = -y * (1.0 - 1.0);
            let right1: f64 = 0.0;
            assert!((left1 - right1).abs() <= 1e-12);
            // And the implementation agrees with both one-sided formulas.
            let eps = 1e-13;
            assert!((sh.derivative(y * eps, y) - (-y)).abs() <= 1e-12);
            assert!(sh.derivative(y * (1.0 - eps), y).abs() <= 1e-12);
        }
    }

    #[test]
    #[should_panic(expected = "classification loss requires labels")]
    fn non_binary_label_is_a_contract_violation() {
        LossSpec::new(LossKind::Logistic).value(0.0, 0.5);
    }
}
