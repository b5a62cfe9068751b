//! Hint declarations and extraction of hint values from trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::oracle::{Color, Scheme, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Node,
    Graph,
    Edge,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HintType {
    Categorical { classes: usize },
    /// Names a node. Graph-located pointers pick one node; node-located
    /// pointers pick one node per node.
    Pointer { nullable: bool },
    Scalar { nullable: bool },
    Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Input,
    Hint,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HintSpec {
    pub name: String,
    pub location: Location,
    #[serde(rename = "type")]
    pub kind: HintType,
    pub role: Role,
}

fn spec(name: &str, location: Location, kind: HintType, role: Role) -> HintSpec {
    HintSpec {
        name: name.into(),
        location,
        kind,
        role,
    }
}

const COLORS: HintType = HintType::Categorical { classes: 3 };
const PTR: HintType = HintType::Pointer { nullable: false };
const PTR_OPT: HintType = HintType::Pointer { nullable: true };
const SCALAR: HintType = HintType::Scalar { nullable: false };
const SCALAR_OPT: HintType = HintType::Scalar { nullable: true };

fn io_specs() -> Vec<HintSpec> {
    vec![
        spec("pos", Location::Node, SCALAR, Role::Input),
        spec("adj", Location::Edge, HintType::Mask, Role::Input),
        spec("pi", Location::Node, PTR, Role::Output),
    ]
}

/// Graph-hint table: everything but `color` is graph-located.
pub fn recursive_hints() -> Vec<HintSpec> {
    use Location::*;
    let mut v = io_specs();
    v.extend([
        spec("u", Graph, PTR, Role::Hint),
        spec("u_pi", Graph, PTR, Role::Hint),
        spec("u_d", Graph, SCALAR, Role::Hint),
        spec("u_f", Graph, SCALAR_OPT, Role::Hint),
        spec("u_v", Graph, PTR_OPT, Role::Hint),
        spec("color", Node, COLORS, Role::Hint),
        spec("time", Graph, SCALAR, Role::Hint),
        spec("stack_op", Graph, HintType::Categorical { classes: 3 }, Role::Hint),
    ]);
    v
}

/// Per-node hint table.
pub fn baseline_hints() -> Vec<HintSpec> {
    use Location::*;
    let mut v = io_specs();
    v.extend([
        spec("pi_h", Node, PTR, Role::Hint),
        spec("color", Node, COLORS, Role::Hint),
        spec("d", Node, SCALAR, Role::Hint),
        spec("f", Node, SCALAR, Role::Hint),
        spec("s_prev", Node, HintType::Mask, Role::Hint),
        spec("s", Node, HintType::Mask, Role::Hint),
        spec("u", Node, HintType::Mask, Role::Hint),
        spec("v", Node, HintType::Mask, Role::Hint),
        spec("s_last", Node, HintType::Mask, Role::Hint),
        spec("time", Graph, SCALAR, Role::Hint),
    ]);
    v
}

pub fn default_hints(scheme: Scheme) -> Vec<HintSpec> {
    match scheme {
        Scheme::Recursive => recursive_hints(),
        Scheme::Baseline => baseline_hints(),
    }
}

/// Checks that a configured table only uses hints the oracle can produce
/// for `scheme`, with their canonical location and type, and that the
/// fixed inputs and the output are present.
pub fn validate_table(table: &[HintSpec], scheme: Scheme) -> Result<()> {
    let canonical = default_hints(scheme);
    for (i, h) in table.iter().enumerate() {
        let Some(c) = canonical.iter().find(|c| c.name == h.name) else {
            return Err(CoreError::Config(format!(
                "hint `{}` is not produced by the {:?} scheme",
                h.name, scheme
            )));
        };
        if c != h {
            return Err(CoreError::Config(format!(
                "hint `{}` must be declared as {:?} / {:?} / {:?}",
                h.name, c.location, c.kind, c.role
            )));
        }
        if table[..i].iter().any(|o| o.name == h.name) {
            return Err(CoreError::Config(format!("hint `{}` declared twice", h.name)));
        }
    }
    for required in ["pos", "adj", "pi"] {
        if !table.iter().any(|h| h.name == required) {
            return Err(CoreError::Config(format!("hint table lacks `{required}`")));
        }
    }
    Ok(())
}

/// One hint's value at one step. Graph-located values have length 1,
/// node-located values length n.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum HintValue {
    Cat(Vec<usize>),
    Ptr(Vec<Option<usize>>),
    Scalar(Vec<Option<f64>>),
    Mask(Vec<bool>),
}

impl HintValue {
    pub fn len(&self) -> usize {
        match self {
            HintValue::Cat(v) => v.len(),
            HintValue::Ptr(v) => v.len(),
            HintValue::Scalar(v) => v.len(),
            HintValue::Mask(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cat(&self) -> &[usize] {
        match self {
            HintValue::Cat(v) => v,
            other => panic!("expected categorical, got {other:?}"),
        }
    }

    pub fn ptr(&self) -> &[Option<usize>] {
        match self {
            HintValue::Ptr(v) => v,
            other => panic!("expected pointer, got {other:?}"),
        }
    }

    pub fn scalar(&self) -> &[Option<f64>] {
        match self {
            HintValue::Scalar(v) => v,
            other => panic!("expected scalar, got {other:?}"),
        }
    }

    pub fn mask(&self) -> &[bool] {
        match self {
            HintValue::Mask(v) => v,
            other => panic!("expected mask, got {other:?}"),
        }
    }
}

fn colors(c: &[Color]) -> HintValue {
    HintValue::Cat(c.iter().map(|&c| c as usize).collect())
}

fn one_hot(n: usize, at: Option<usize>) -> HintValue {
    HintValue::Mask((0..n).map(|i| Some(i) == at).collect())
}

/// Value of hint `spec` at snapshot `t` of `traj`. Times are normalised by
/// `2n`, the final value of the global clock.
pub fn hint_value(traj: &Trajectory, t: usize, spec: &HintSpec) -> Result<HintValue> {
    let n = traj.n;
    let scale = 1.0 / (2 * n) as f64;
    let time = |x: usize| Some(x as f64 * scale);
    let missing = || {
        CoreError::InvalidInput(format!(
            "hint `{}` unavailable in {:?} trajectory",
            spec.name, traj.scheme
        ))
    };
    let s = traj.steps.get(t).ok_or_else(|| {
        CoreError::InvalidInput(format!("step {t} beyond trajectory of {}", traj.len()))
    })?;
    let v = match traj.scheme {
        Scheme::Recursive => match spec.name.as_str() {
            "u" => HintValue::Ptr(vec![Some(s.u)]),
            "u_pi" => HintValue::Ptr(vec![Some(s.u_pi)]),
            "u_d" => HintValue::Scalar(vec![time(s.u_d)]),
            "u_f" => HintValue::Scalar(vec![s.u_f.and_then(time)]),
            "u_v" => HintValue::Ptr(vec![s.u_v]),
            "color" => colors(&s.color),
            "time" => HintValue::Scalar(vec![time(s.time)]),
            "stack_op" => HintValue::Cat(vec![s.stack_op as usize]),
            _ => return Err(missing()),
        },
        Scheme::Baseline => {
            let b = traj.baseline.get(t).ok_or_else(missing)?;
            match spec.name.as_str() {
                "pi_h" => HintValue::Ptr(b.pi_h.iter().map(|&p| Some(p)).collect()),
                "color" => colors(&b.color),
                "d" => HintValue::Scalar(b.d.iter().map(|&x| time(x)).collect()),
                "f" => HintValue::Scalar(b.f.iter().map(|&x| time(x)).collect()),
                "s" => one_hot(n, b.s),
                "u" => one_hot(n, b.u),
                "v" => one_hot(n, b.v),
                "s_prev" => one_hot(n, b.s_prev),
                "s_last" => one_hot(n, b.s_last),
                "time" => HintValue::Scalar(vec![time(b.time)]),
                _ => return Err(missing()),
            }
        }
    };
    Ok(v)
}

/// Values of every `Role::Hint` entry of `table`, in table order.
pub fn step_hints(traj: &Trajectory, t: usize, table: &[HintSpec]) -> Result<Vec<HintValue>> {
    table
        .iter()
        .filter(|h| h.role == Role::Hint)
        .map(|h| hint_value(traj, t, h))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::oracle::{sample_trajectory_baseline, sample_trajectory_recursive};

    #[test]
    fn canonical_tables_validate() {
        validate_table(&recursive_hints(), Scheme::Recursive).unwrap();
        validate_table(&baseline_hints(), Scheme::Baseline).unwrap();
        assert!(validate_table(&recursive_hints(), Scheme::Baseline).is_err());
        let mut t = recursive_hints();
        t.retain(|h| h.name != "adj");
        assert!(validate_table(&t, Scheme::Recursive).is_err());
    }

    #[test]
    fn stack_op_is_graph_categorical() {
        let t = recursive_hints();
        let op = t.iter().find(|h| h.name == "stack_op").unwrap();
        assert_eq!(op.location, Location::Graph);
        assert_eq!(op.kind, HintType::Categorical { classes: 3 });
    }

    #[test]
    fn recursive_values_on_edge_graph() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let traj = sample_trajectory_recursive(&g);
        let vals = step_hints(&traj, 1, &recursive_hints()).unwrap();
        // u, u_pi, u_d, u_f, u_v, color, time, stack_op
        assert_eq!(vals[0], HintValue::Ptr(vec![Some(0)]));
        assert_eq!(vals[3], HintValue::Scalar(vec![None]));
        assert_eq!(vals[4], HintValue::Ptr(vec![Some(1)]));
        assert_eq!(vals[5], HintValue::Cat(vec![1, 0]));
        assert_eq!(vals[6], HintValue::Scalar(vec![Some(0.25)]));
        assert_eq!(vals[7], HintValue::Cat(vec![2]));
    }

    #[test]
    fn baseline_masks_are_one_hot_or_empty() {
        let g = crate::graph::gen_er(8, 0.3, 4).unwrap();
        let traj = sample_trajectory_baseline(&g);
        let table = baseline_hints();
        for t in 0..traj.len() {
            for (h, v) in table
                .iter()
                .filter(|h| h.role == Role::Hint)
                .zip(step_hints(&traj, t, &table).unwrap())
            {
                if h.kind == HintType::Mask {
                    assert!(v.mask().iter().filter(|&&b| b).count() <= 1);
                }
            }
        }
    }
}
