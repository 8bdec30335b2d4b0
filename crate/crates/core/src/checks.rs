use serde::Serialize;

/// Multiplicative headroom on the continuous-time bounds, covering
/// discretization and Newton tolerances.
pub const BOUND_SLACK: f64 = 1.05;

/// One inequality `lhs ≤ factor · rhs`, evaluated at its worst instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundCheck {
    /// Stable short name, e.g. `trajectory-bound`.
    pub id: String,
    /// The inequality in plain text.
    pub relation: String,
    pub lhs: f64,
    pub rhs: f64,
    pub factor: f64,
    /// `lhs / rhs`; zero when both sides vanish.
    pub ratio: f64,
    pub pass: bool,
    /// Number of instances the check was evaluated on (checkpoints, steps, ...).
    pub instances: usize,
}

impl BoundCheck {
    pub fn new(id: &str, relation: &str, lhs: f64, rhs: f64, factor: f64) -> Self {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        BoundCheck {
            id: id.to_string(),
            relation: relation.to_string(),
            lhs,
            rhs,
            factor,
            ratio,
            pass: lhs <= factor * rhs,
            instances: 1,
        }
    }

    /// Folds per-instance checks into one, keeping the instance with the largest ratio
    /// and failing if any instance fails.
    pub fn worst_of(id: &str, relation: &str, checks: impl IntoIterator<Item = BoundCheck>) -> Self {
        let mut worst: Option<BoundCheck> = None;
        let mut all_pass = true;
        let mut count = 0;
        for c in checks {
            count += 1;
            all_pass &= c.pass;
            let replace = match &worst {
                None => true,
                Some(w) => (!c.pass && w.pass) || (c.pass == w.pass && c.ratio > w.ratio),
            };
            if replace {
                worst = Some(c);
            }
        }
        let mut out = worst.unwrap_or_else(|| BoundCheck::new(id, relation, 0.0, 0.0, 1.0));
        out.id = id.to_string();
        out.relation = relation.to_string();
        out.pass = all_pass;
        out.instances = count;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worst_instance_wins() {
        let c = BoundCheck::worst_of(
            "x",
            "a <= b",
            [
                BoundCheck::new("x", "", 1.0, 4.0, 1.0),
                BoundCheck::new("x", "", 3.0, 4.0, 1.0),
                BoundCheck::new("x", "", 0.0, 0.0, 1.0),
            ],
        );
        assert!(c.pass);
        assert_eq!(c.ratio, 0.75);
        assert_eq!(c.instances, 3);
    }

    #[test]
    fn any_failure_fails() {
        let c = BoundCheck::worst_of(
            "x",
            "a <= b",
            [BoundCheck::new("x", "", 5.0, 4.0, 1.0), BoundCheck::new("x", "", 3.0, 1.0, 5.0)],
        );
        assert!(!c.pass);
        assert_eq!(c.lhs, 5.0);
    }

    #[test]
    fn empty_is_vacuous_pass() {
        let c = BoundCheck::worst_of("x", "a <= b", []);
        assert!(c.pass);
        assert_eq!(c.instances, 0);
    }
}
