//! Fixed-horizon comparison controller that lumps all uncertainty into the
//! box `|w~|_inf <= w~max`, both along the horizon and in the terminal set.

use nalgebra::{DMatrix, DVector};

use crate::controller::{
    admissible_states, lumped_template, solve_horizon, ControllerError, HorizonTemplate, MpcSolution,
    TerminalComponents,
};
use crate::geometry::{max_robust_invariant, InvariantOutcome, Polytope, DEFAULT_MAX_ITER};
use crate::problem::Problem;
use crate::qp::SolveStatus;
use crate::system::{net_additive_bound, NetAdditiveBound, UncertainSystem};

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub p: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub horizon: usize,
    /// Robust positive invariant set of `x+ = (A + BK) x + w~`.
    pub lumped_set: Polytope,
    pub p_n: DMatrix<f64>,
    pub bound: NetAdditiveBound,
}

impl BaselineConfig {
    /// Reuses the terminal cost of `terminal`; only the set changes.
    pub fn synthesize(sys: &UncertainSystem, terminal: &TerminalComponents, p: &DMatrix<f64>, r: &DMatrix<f64>, horizon: usize) -> Result<Self, ControllerError> {
        if horizon == 0 {
            return Err(ControllerError::InvalidConfig("horizon must be at least 1".into()));
        }
        let bound = net_additive_bound(sys)?;
        let k = &terminal.k;
        let acl = sys.nominal_closed_loop(k);
        let lumped_w = Polytope::inf_ball(sys.state_dim(), bound.w_tilde_max)?;
        let omega0 = admissible_states(sys, k)?;
        let lumped_set = match max_robust_invariant(&omega0, &[acl], &lumped_w, DEFAULT_MAX_ITER)? {
            InvariantOutcome::Converged { set, .. } => set,
            InvariantOutcome::Empty { .. } => return Err(ControllerError::EmptyTerminalSet),
        };
        Ok(Self {
            p: p.clone(),
            r: r.clone(),
            k: k.clone(),
            horizon,
            lumped_set,
            p_n: terminal.p_n.clone(),
            bound,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BaselineController {
    pub system: UncertainSystem,
    pub config: BaselineConfig,
    template: HorizonTemplate,
}

impl BaselineController {
    pub fn new(system: UncertainSystem, config: BaselineConfig) -> Result<Self, ControllerError> {
        let template = lumped_template(
            &system,
            &config.p,
            &config.r,
            &config.p_n,
            &config.lumped_set,
            config.bound.w_tilde_max,
            config.horizon,
        )?;
        Ok(Self { system, config, template })
    }

    pub fn from_problem(problem: &Problem, terminal: &TerminalComponents) -> Result<Self, ControllerError> {
        let cfg = BaselineConfig::synthesize(&problem.system, terminal, &problem.p, &problem.r, problem.horizon)?;
        Self::new(problem.system.clone(), cfg)
    }

    pub fn template(&self) -> &HorizonTemplate {
        &self.template
    }

    pub fn solve(&self, x: &DVector<f64>) -> Result<MpcSolution, ControllerError> {
        let s = solve_horizon(&self.template, x);
        let per_horizon = vec![s.record.clone()];
        match (s.solution, s.record.status) {
            (Some((u_bar, gains, j_star)), _) => Ok(MpcSolution {
                status: SolveStatus::Optimal,
                n_star: self.config.horizon,
                u_bar,
                gains,
                j_star,
                per_horizon,
            }),
            (None, SolveStatus::Infeasible) => Err(ControllerError::AllHorizonsInfeasible { per_horizon }),
            (None, _) => Err(ControllerError::NumericalFailure { per_horizon }),
        }
    }
}

pub fn baseline_solve(sys: &UncertainSystem, cfg: &BaselineConfig, x: &DVector<f64>) -> Result<MpcSolution, ControllerError> {
    BaselineController::new(sys.clone(), cfg.clone())?.solve(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::Controller;

    #[test]
    fn exact_model_lumps_nothing() {
        let p = Problem::default_example();
        let s = &p.system;
        let sys = UncertainSystem::new(
            s.a_bar().clone(),
            s.b_bar().clone(),
            vec![DMatrix::zeros(2, 2)],
            vec![DMatrix::zeros(2, 1)],
            s.w().clone(),
            s.x().clone(),
            s.u().clone(),
        )
        .unwrap();
        let ctrl = Controller::new(sys.clone(), crate::controller::MpcConfig::synthesize(&sys, &p.k, &p.p, &p.r, 4).unwrap()).unwrap();
        let base = BaselineController::new(
            sys.clone(),
            BaselineConfig::synthesize(&sys, &ctrl.config.terminal, &p.p, &p.r, 4).unwrap(),
        )
        .unwrap();
        // W is a cube, so the lumped box is W itself and both sets coincide.
        let (a, b) = (&base.config.lumped_set, &ctrl.config.terminal.set);
        assert!(a.is_subset(b).unwrap() && b.is_subset(a).unwrap());

        let x = DVector::from_column_slice(&[2.0, -1.5]);
        let j_base = base.solve(&x).unwrap().j_star;
        let j_prop = solve_horizon(ctrl.template(4), &x).solution.unwrap().2;
        assert!((j_base - j_prop).abs() < 1e-6 * (1.0 + j_prop.abs()));
    }
}
