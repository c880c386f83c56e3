"""Config-driven reproduction experiments (CSV + SVG outputs).

Four runners: the analytic feedback curves of the scalar benchmark, batch
Q-learning on that benchmark across horizons and discount factors, economic
Q-learning on the stirred-tank reactor, and safe Q-learning with tube MPC.
Every run writes a manifest (config hash, seed, library versions) so that a
re-run with the same inputs is bit-exact; figures are emitted from the data
already written to CSV.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .config import config_hash, render_config
from .errors import Infeasible
from .lqr import (
    scalar_benchmark_k,
    scalar_benchmark_problem,
    scalar_example_feedbacks,
    solve_discounted_dare,
    undiscounted_equivalent_residual,
)
from .mpc import (
    MpcParameters,
    build_ocp,
    cstr_economic_cost,
    cstr_model,
    cstr_step,
    evaluate_policy_and_value,
)
from .ocp import AffineModel
from .polytope import Polytope, regular_polygon, support_from_vertices, polygon_area
from .qlearning import (
    LearningConfig,
    batch_update,
    project_nominal,
    project_robust,
    robust_batch_update,
)
from .tube import (
    make_tube_problem,
    mrpi_outer_approx,
    robust_invariant_set,
    solve_tube_mpc,
    tube_design,
)

DIAG_NORMALS = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]]) / np.sqrt(2.0)


# ---------------------------------------------------------------------------
# shared plumbing

def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(_cell(v) for v in row) + "\n")


def _cell(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and math.isnan(value):
        return "nan"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _write_manifest(out_dir, experiment, cfg, outputs):
    import scipy

    manifest = {
        "experiment": experiment,
        "seed": cfg["experiment"]["seed"],
        "config_sha256": config_hash(cfg),
        "versions": {
            "stabmdp": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "outputs": sorted(outputs),
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")
    with open(os.path.join(out_dir, "config_resolved.txt"), "w", encoding="utf-8") as handle:
        handle.write(render_config(cfg))
    return path


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("STABMDP_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# analytic feedback curves of the scalar benchmark

def run_analytic_lqr(cfg: dict, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    grid = np.linspace(cfg["grid"]["gamma_min"], cfg["grid"]["gamma_max"],
                       cfg["grid"]["points"])
    rows = []
    max_solver_gap = 0.0
    for gamma in grid:
        gamma = float(gamma)
        feedbacks = scalar_example_feedbacks(gamma)
        prob = scalar_benchmark_problem(gamma)
        sol = solve_discounted_dare(prob)
        k_solver = float(sol.k_mat[0, 0])
        max_solver_gap = max(max_solver_gap, abs(k_solver - feedbacks.k_unconstrained))
        stable = gamma > 1.0 / 3.0
        if stable:
            residual, k_eq = undiscounted_equivalent_residual(prob, sol)
            k_tilde = float(k_eq[0, 0]) if residual < 1e-8 else float("nan")
        else:
            # the closed loop diverges: the transformed problem without a
            # terminal cost no longer matches the discounted one
            k_tilde = float("nan")
        rows.append((gamma, k_solver, feedbacks.k_mstab, float(sol.p_mat[0, 0]),
                     k_tilde, int(stable)))
    csv_path = os.path.join(out_dir, "analytic_lqr.csv")
    _write_csv(csv_path, ["gamma", "k_unconstrained", "k_mstab", "p_value",
                          "k_tilde_no_terminal", "assumption3_ok"], rows)
    fig_path = os.path.join(out_dir, "fig_analytic_lqr.svg")
    _figure_analytic(rows, fig_path)
    outputs = [csv_path, fig_path]
    _write_manifest(out_dir, "analytic-lqr", cfg, outputs)
    return {"rows": rows, "max_solver_gap": max_solver_gap, "csv": csv_path}


def _figure_analytic(rows, path):
    from .svgplot import Chart

    arr = np.array([r[:5] for r in rows], dtype=float)
    chart = Chart(title="Scalar benchmark feedbacks", xlabel="discount factor",
                  ylabel="feedback gain")
    chart.hline(1.0, color="#222222", dash="2,3", label="stability bounds")
    chart.hline(3.0, color="#222222", dash="2,3")
    chart.polyline(arr[:, 0], arr[:, 1], "#1f77b4", label="unconstrained")
    chart.polyline(arr[:, 0], arr[:, 2], "#e6b400", dash="7,4", label="stability constrained")
    mask = np.isfinite(arr[:, 4])
    chart.polyline(arr[mask, 0], arr[mask, 4], "#d62728", dash="2,4",
                   label="shifted cost, no terminal")
    chart.save(path)


# ---------------------------------------------------------------------------
# batch Q-learning on the scalar benchmark

def _scalar_parameters(pr: dict, horizon: int) -> MpcParameters:
    return MpcParameters(
        model=AffineModel([[pr["a"]]], [[pr["b"]]], [0.0]),
        horizon=horizon,
        stage_cost=np.eye(2),
        x_ref=[0.0],
        u_ref=[0.0],
        initial_mat=[[0.0]],
        initial_vec=[0.0],
        initial_offset=0.0,
        terminal_cost=[[1.0]],
        terminal_feedback=[[pr["terminal_feedback"]]],
    )


def learn_scalar_feedback(gamma: float, horizon: int, pr: dict, lr: dict,
                          seed: int, n_batches: int | None = None):
    """One learning run; returns (learned feedback, per-batch log rows)."""
    lc = LearningConfig(
        alpha=lr["alpha"], n_batches=n_batches or lr["batches"],
        batch_size=lr["batch_size"], seed=seed,
        epsilon_stability=lr["epsilon"], exploration=lr["exploration"],
    )
    rng = np.random.default_rng(lc.seed)
    a_sys, b_sys = pr["a"], pr["b"]
    t_w, r_w = pr["state_weight"], pr["input_weight"]

    def true_cost(s, act):
        s = float(np.asarray(s).reshape(()))
        act = float(np.asarray(act).reshape(()))
        return t_w * s * s + r_w * act * act

    params = project_nominal(_scalar_parameters(pr, horizon), lc.epsilon_stability)
    learnable = ("initial_mat", "stage_cost", "terminal_cost")
    log = []
    span = lr["state_range"]
    for batch in range(lc.n_batches):
        ocp = build_ocp(params)
        transitions = []
        for _ in range(lc.batch_size):
            s = rng.uniform(-span, span)
            action, _, sol = evaluate_policy_and_value(params, [s], ocp=ocp, certify=False)
            act = float(action[0]) + rng.uniform(-lc.exploration, lc.exploration)
            s_next = a_sys * s + b_sys * act
            transitions.append(([s], [act], [s_next], None, sol))
        params, mean_abs, _ = batch_update(
            params, transitions, lc, stage_cost=true_cost, gamma=gamma,
            learnable=learnable,
            projector=lambda p: project_nominal(p, lc.epsilon_stability),
        )
        log.append((batch, float(params.initial_mat[0, 0]),
                    float(params.stage_cost[0, 0]), float(params.stage_cost[0, 1]),
                    float(params.stage_cost[1, 1]), float(params.terminal_cost[0, 0]),
                    mean_abs, 1))
    action, _, _ = evaluate_policy_and_value(params, [1.0])
    return -float(action[0]), log


def run_qlearn_lqr(cfg: dict, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    pr, lr = cfg["problem"], cfg["learning"]
    seed = cfg["experiment"]["seed"]
    horizons = [int(h) for h in cfg["sweep"]["horizons"]]
    gammas = [float(g) for g in cfg["sweep"]["gammas"]]
    horizon_gamma = float(cfg["sweep"]["horizon_gamma"])
    gamma_horizon = int(cfg["sweep"]["gamma_horizon"])

    jobs = [("horizon", h, horizon_gamma, h) for h in horizons]
    jobs += [("gamma", g, g, gamma_horizon) for g in gammas]

    def execute(idx_job):
        idx, (kind, tag, gamma, horizon) = idx_job
        k_learned, log = learn_scalar_feedback(
            gamma, horizon, pr, lr, seed=seed + 1000 * idx
        )
        return kind, tag, gamma, horizon, k_learned, log

    workers = _thread_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(execute, enumerate(jobs)))
    else:
        results = [execute(item) for item in enumerate(jobs)]

    outputs = []
    horizon_rows, gamma_rows = [], []
    log_header = ["batch", "lam", "h_ss", "h_sa", "h_aa", "p", "mean_abs_td", "feasible"]
    for kind, tag, gamma, horizon, k_learned, log in results:
        analytic = scalar_example_feedbacks(gamma)
        row = (gamma, horizon, k_learned, analytic.k_unconstrained, analytic.k_mstab)
        if kind == "horizon":
            horizon_rows.append(row)
        else:
            gamma_rows.append(row)
        log_path = os.path.join(out_dir, f"qlearn_lqr_log_{kind}_{tag}.csv")
        _write_csv(log_path, log_header, log)
        outputs.append(log_path)

    horizon_rows.sort(key=lambda r: r[1])
    gamma_rows.sort(key=lambda r: r[0])
    head = ["gamma", "horizon", "k_learned", "k_unconstrained", "k_mstab"]
    horizons_csv = os.path.join(out_dir, "qlearn_lqr_horizons.csv")
    gammas_csv = os.path.join(out_dir, "qlearn_lqr_gammas.csv")
    _write_csv(horizons_csv, head, horizon_rows)
    _write_csv(gammas_csv, head, gamma_rows)
    outputs += [horizons_csv, gammas_csv]

    from .svgplot import Chart

    fig1 = os.path.join(out_dir, "fig_qlearn_lqr_horizons.svg")
    chart = Chart(title=f"Learned feedback at discount {horizon_gamma}",
                  xlabel="prediction horizon", ylabel="feedback gain")
    if horizon_rows:
        arr = np.array(horizon_rows, dtype=float)
        chart.polyline(arr[:, 1], arr[:, 2], "#1f77b4", label="learned")
        chart.hline(1.0, color="#222222", dash="2,3", label="stability bound")
    chart.save(fig1)
    fig2 = os.path.join(out_dir, "fig_qlearn_lqr_gammas.svg")
    chart = Chart(title=f"Learned feedback, horizon {gamma_horizon}",
                  xlabel="discount factor", ylabel="feedback gain")
    if gamma_rows:
        arr = np.array(gamma_rows, dtype=float)
        chart.polyline(arr[:, 0], arr[:, 2], "#1f77b4", label="learned, constrained")
        chart.polyline(arr[:, 0], arr[:, 3], "#d62728", dash="2,4", label="unconstrained")
        chart.polyline(arr[:, 0], arr[:, 4], "#e6b400", dash="7,4", label="constrained analytic")
    chart.save(fig2)
    outputs += [fig1, fig2]
    _write_manifest(out_dir, "qlearn-lqr", cfg, outputs)
    return {"horizon_rows": horizon_rows, "gamma_rows": gamma_rows}


# ---------------------------------------------------------------------------
# economic Q-learning on the stirred tank reactor

def run_cstr(cfg: dict, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    mp, lr = cfg["mpc"], cfg["learning"]
    seed = cfg["experiment"]["seed"]
    gamma = float(mp["gamma"])
    lc = LearningConfig(
        alpha=lr["alpha"], n_batches=lr["batches"], batch_size=lr["batch_size"],
        n_epochs=lr["epochs"], seed=seed, epsilon_stability=lr["epsilon"],
        exploration=lr["exploration"],
    )
    rng = np.random.default_rng(seed)
    model = cstr_model(substeps=mp["substeps"])
    params = MpcParameters(
        model=model, horizon=mp["horizon"],
        stage_cost=np.diag([float(w) for w in lr["initial_stage_weights"]]),
        x_ref=[0.5, 0.5], u_ref=[4.0],
        initial_mat=np.zeros((2, 2)), initial_vec=np.zeros(2), initial_offset=0.0,
        terminal_point=True,
        input_mat=[[1.0], [-1.0]], input_vec=[20.0, 0.0],
    )
    params = project_nominal(params, lc.epsilon_stability)
    learnable = ("stage_cost", "initial_mat", "initial_vec", "initial_offset")
    initial_conditions = [np.asarray(ic, dtype=float) for ic in lr["initial_conditions"]]
    substeps = mp["substeps"]

    log_rows = []
    for epoch in range(lc.n_epochs):
        epoch_abs = []
        for b_idx in range(lc.n_batches):
            ic = initial_conditions[b_idx % len(initial_conditions)]
            transitions = _cstr_rollout(params, ic, lc, rng, substeps)
            if not transitions:
                continue
            params, mean_abs, _ = batch_update(
                params, transitions, lc, stage_cost=lambda s, a: cstr_economic_cost(s, a),
                gamma=gamma, learnable=learnable,
                projector=lambda p: project_nominal(p, lc.epsilon_stability),
            )
            epoch_abs.append(mean_abs)
        h = params.stage_cost
        log_rows.append((
            epoch, float(h[0, 0]), float(h[0, 1]), float(h[0, 2]), float(h[1, 1]),
            float(h[1, 2]), float(h[2, 2]),
            float(params.initial_mat[0, 0]), float(params.initial_mat[0, 1]),
            float(params.initial_mat[1, 1]),
            float(params.initial_vec[0]), float(params.initial_vec[1]),
            float(params.initial_offset),
            float(np.mean(epoch_abs)) if epoch_abs else float("nan"), 1,
        ))

    eigs = np.sort(np.linalg.eigvalsh(params.stage_cost))
    audit_steps, audit_traj = _cstr_audit(params, substeps)
    csv_path = os.path.join(out_dir, "cstr_theta.csv")
    header = ["epoch", "h_11", "h_12", "h_1q", "h_22", "h_2q", "h_qq",
              "lam_11", "lam_12", "lam_22", "lamvec_1", "lamvec_2", "offset",
              "mean_abs_td", "feasible"]
    _write_csv(csv_path, header, log_rows)
    audit_csv = os.path.join(out_dir, "cstr_audit.csv")
    _write_csv(audit_csv, ["step", "c_a", "c_b", "q"],
               [(i, s[0], s[1], u) for i, (s, u) in enumerate(audit_traj)])
    outputs = [csv_path, audit_csv]
    outputs += _cstr_figures(out_dir, log_rows)
    summary = {
        "stage_cost_eigenvalues": [float(v) for v in eigs],
        "audit_steps_to_steady_state": audit_steps,
        "csv": csv_path,
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    outputs.append(os.path.join(out_dir, "summary.json"))
    _write_manifest(out_dir, "cstr", cfg, outputs)
    return summary


def _cstr_rollout(params, ic, lc, rng, substeps):
    """One batch: a closed-loop rollout with exploration from one initial
    condition; transitions carry the successor value from the next solve."""
    state = np.asarray(ic, dtype=float)
    ocp = build_ocp(params)
    warm = None
    raw = []
    for _ in range(lc.batch_size):
        action, value, sol = evaluate_policy_and_value(params, state, ocp=ocp, warm=warm, certify=False)
        if action is None:
            break
        warm = sol
        act = float(np.clip(action[0] + rng.uniform(-lc.exploration, lc.exploration),
                            0.0, 20.0))
        nxt = cstr_step(state, act, substeps)
        raw.append((state.copy(), act, nxt.copy(), value, sol))
        state = nxt
    if not raw:
        return []
    _, v_last, _ = evaluate_policy_and_value(params, state, ocp=ocp, warm=warm, certify=False)
    transitions = []
    for k, (s, act, nxt, _, sol) in enumerate(raw):
        v_next = raw[k + 1][3] if k + 1 < len(raw) else v_last
        transitions.append((s, [act], nxt, v_next, sol))
    return transitions


def _cstr_audit(params, substeps, max_steps=60, tol=1e-2):
    """Closed-loop run from (1, 0); returns (first step within tol, trace)."""
    state = np.array([1.0, 0.0])
    trace = []
    hit = None
    warm = None
    ocp = build_ocp(params)
    for step in range(max_steps):
        action, _, sol = evaluate_policy_and_value(params, state, ocp=ocp, warm=warm)
        if action is None:
            break
        warm = sol
        act = float(np.clip(action[0], 0.0, 20.0))
        trace.append((state.copy(), act))
        state = cstr_step(state, act, substeps)
        if hit is None and np.abs(state - 0.5).max() <= tol:
            hit = step + 1
    trace.append((state.copy(), float("nan")))
    return hit, trace


def _cstr_figures(out_dir, log_rows):
    from .svgplot import Chart

    arr = np.array([r[:14] for r in log_rows], dtype=float)
    fig_params = os.path.join(out_dir, "fig_cstr_params.svg")
    chart = Chart(title="Reactor cost parameters", xlabel="epoch", ylabel="value")
    colors = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]
    labels = ["h_11", "h_12", "h_1q", "h_22", "h_2q", "h_qq"]
    for i in range(6):
        chart.polyline(arr[:, 0], arr[:, 1 + i], colors[i], label=labels[i])
    chart.save(fig_params)
    fig_td = os.path.join(out_dir, "fig_cstr_td.svg")
    chart = Chart(title="Temporal-difference error", xlabel="epoch", ylabel="mean |delta|")
    chart.polyline(arr[:, 0], arr[:, 13], "#1f77b4")
    chart.save(fig_td)
    return [fig_params, fig_td]


# ---------------------------------------------------------------------------
# safe Q-learning with tube MPC

def _octagon_sampler(radius, rng):
    """Uniform sampling over a regular octagon (triangle fan)."""
    verts = regular_polygon(8, radius).vertices()
    k = len(verts)

    def sample():
        i = int(rng.integers(0, k))
        a, b = verts[i], verts[(i + 1) % k]
        u, v = rng.uniform(0, 1, size=2)
        if u + v > 1.0:
            u, v = 1.0 - u, 1.0 - v
        return u * a + v * b  # third triangle vertex is the origin

    return sample, verts


def run_tube(cfg: dict, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    pr, nz, lr = cfg["problem"], cfg["noise"], cfg["learning"]
    seed = cfg["experiment"]["seed"]
    rng = np.random.default_rng(seed)
    gamma = float(pr["gamma"])
    bound = float(pr["state_bound"])
    u_bound = float(pr["input_bound"])
    a_mat = np.array([[1.0, 0.1], [0.0, 1.1]])
    b_mat = np.array([[0.05], [0.1]])
    target = np.asarray(pr["target"], dtype=float)
    target_u = float(pr["target_input"])
    true_h = np.diag([float(w) for w in pr["true_weights"]])

    def true_cost(s, act):
        dev = np.concatenate([np.asarray(s, dtype=float) - target,
                              np.asarray(act, dtype=float) - target_u])
        return float(dev @ true_h @ dev)

    sample_noise, oct_verts = _octagon_sampler(float(nz["radius"]), rng)
    c_mat = np.vstack([np.eye(2), -np.eye(2), np.zeros((2, 2))])
    d_mat = np.vstack([np.zeros((4, 1)), [[1.0]], [[-1.0]]])
    c_hat = np.array([-bound, -bound, -bound, -bound, -u_bound, -u_bound])

    lc = LearningConfig(
        alpha=lr["alpha"], n_batches=1, batch_size=lr["batch_size"],
        n_epochs=lr["epochs"], seed=seed, epsilon_stability=lr["epsilon"],
        exploration=lr["exploration"],
    )
    h0 = np.diag([float(w) for w in lr["initial_stage_weights"]])

    # bootstrap: run the ancillary feedback alone to gather first residuals
    from .tube import riccati_terminal_pair

    _, k0 = riccati_terminal_pair(a_mat, b_mat, h0)
    state = np.array([0.8, 0.0])
    trajectory = [state.copy()]
    residuals = []
    violations = 0
    for _ in range(int(nz["init_samples"])):
        act = float(np.clip(-(k0 @ state)[0], -u_bound, u_bound))
        w = sample_noise()
        nxt = a_mat @ state + b_mat @ np.array([act]) + w
        residuals.append(nxt - (a_mat @ state + b_mat @ np.array([act])))
        state = nxt
        trajectory.append(state.copy())
        if np.abs(state).max() > bound + 1e-12:
            violations += 1
    residual_log = np.array(residuals)
    m0 = np.maximum(residual_log @ DIAG_NORMALS.T, 0.0).max(axis=0)
    prob = make_tube_problem(
        a_mat, b_mat, h0, [0.0, 0.0], [0.0], int(pr["horizon"]),
        c_mat, d_mat, c_hat, Polytope(DIAG_NORMALS, m0, normalize=False),
        initial_mat=np.zeros((2, 2)), initial_vec=np.zeros(2), initial_offset=0.0,
    )
    _, _, term0, _ = tube_design(prob)
    mrpi_initial = robust_invariant_set(prob, prob.c_hat)
    initial_snapshot = (term0, mrpi_initial, prob.x_ref.copy())

    log_rows = []
    infeasible_after_start = 0
    warm = None
    for epoch in range(lc.n_epochs):
        transitions = []
        for _ in range(lc.batch_size):
            try:
                sol = solve_tube_mpc(prob, state, warm=warm)
                warm = sol
                planned = float(sol.controls[0][0])
            except Infeasible:
                infeasible_after_start += 1
                warm = None
                planned = float(np.clip(-(prob.k_gain @ (state - prob.x_ref))[0]
                                        + prob.u_ref[0], -u_bound, u_bound))
            act = float(np.clip(planned + rng.uniform(-lc.exploration, lc.exploration),
                                -u_bound, u_bound))
            w = sample_noise()
            nxt = a_mat @ state + b_mat @ np.array([act]) + w
            residual_log = np.vstack([residual_log, nxt - (a_mat @ state + b_mat @ np.array([act]))])
            transitions.append((state.copy(), np.array([act]), nxt.copy()))
            state = nxt
            trajectory.append(state.copy())
            if np.abs(state).max() > bound + 1e-12:
                violations += 1
        # absorb the new residuals before the gradient step so containment
        # never depends on step acceptance
        prob = project_robust(prob, residual_log, lc.epsilon_stability)
        prob, mean_abs, accepted = robust_batch_update(
            prob, transitions, lc, stage_cost=true_cost, gamma=gamma,
            residual_log=residual_log, feasibility_state=state,
        )
        if accepted:
            warm = None
        h = prob.stage_cost
        log_rows.append((
            epoch, float(h[0, 0]), float(h[0, 1]), float(h[0, 2]), float(h[1, 1]),
            float(h[1, 2]), float(h[2, 2]),
            float(prob.x_ref[0]), float(prob.x_ref[1]), float(prob.u_ref[0]),
            float(prob.initial_mat[0, 0]), float(prob.initial_vec[0]),
            float(prob.initial_offset),
            *[float(v) for v in prob.noise_set.g_vec],
            mean_abs, int(accepted), 1,
        ))

    _, _, term_final, _ = tube_design(prob)
    mrpi_final = robust_invariant_set(prob, prob.c_hat)
    minimal_set = mrpi_outer_approx(prob.a_closed, prob.noise_set,
                                    eps=float(lr["mrpi_eps"]))
    contained = bool((residual_log @ prob.noise_set.f_mat.T
                      <= prob.noise_set.g_vec + 1e-12).all())

    outputs = []
    traj_csv = os.path.join(out_dir, "tube_trajectory.csv")
    _write_csv(traj_csv, ["step", "p", "v"],
               [(i, s[0], s[1]) for i, s in enumerate(trajectory)])
    theta_csv = os.path.join(out_dir, "tube_theta.csv")
    _write_csv(theta_csv, ["epoch", "h_11", "h_12", "h_1u", "h_22", "h_2u", "h_uu",
                           "xr_1", "xr_2", "ur", "lam_11", "lamvec_1", "offset",
                           "m_1", "m_2", "m_3", "m_4", "mean_abs_td", "accepted",
                           "terminal_nonempty"], log_rows)
    noise_csv = os.path.join(out_dir, "tube_noise_samples.csv")
    _write_csv(noise_csv, ["w_1", "w_2"], [tuple(w) for w in residual_log])
    outputs += [traj_csv, theta_csv, noise_csv]
    for name, poly in [("terminal_initial", initial_snapshot[0]),
                       ("terminal_final", term_final),
                       ("mrpi_max_initial", initial_snapshot[1]),
                       ("mrpi_max_final", mrpi_final),
                       ("mrpi_min_final", minimal_set),
                       ("noise_set_final", prob.noise_set)]:
        path = os.path.join(out_dir, f"tube_{name}.txt")
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(poly.to_text())
        outputs.append(path)
    outputs += _tube_figures(out_dir, cfg, trajectory, log_rows, initial_snapshot,
                             (term_final, mrpi_final, prob.x_ref.copy()),
                             minimal_set, residual_log, prob.noise_set, oct_verts)
    summary = {
        "violations": violations,
        "infeasible_after_start": infeasible_after_start,
        "residuals_contained": contained,
        "steps": len(trajectory) - 1,
        "final_reference": [float(v) for v in prob.x_ref],
        "max_abs_state": float(np.abs(np.array(trajectory)).max()),
        "accepted_updates": int(sum(r[-2] for r in log_rows)),
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    outputs.append(os.path.join(out_dir, "summary.json"))
    _write_manifest(out_dir, "tube", cfg, outputs)
    return summary


def _tube_figures(out_dir, cfg, trajectory, log_rows, initial_snap, final_snap,
                  minimal_set, residual_log, noise_set, oct_verts):
    from .svgplot import Chart

    bound = float(cfg["problem"]["state_bound"])
    term0, mrpi0, xref0 = initial_snap
    term1, mrpi1, xref1 = final_snap
    fig_sets = os.path.join(out_dir, "fig_tube_sets.svg")
    chart = Chart(title="Invariant sets and closed-loop trajectory",
                  xlabel="position", ylabel="velocity")
    chart.set_limits((-1.1 * bound, 1.1 * bound), (-1.1 * bound, 1.1 * bound))
    box_pts = np.array([[-bound, -bound], [bound, -bound], [bound, bound],
                        [-bound, bound], [-bound, -bound]])
    chart.polyline(box_pts[:, 0], box_pts[:, 1], "#222222", dash="5,4",
                   label="state constraints")
    for poly, shift, color, label in [
        (mrpi0, xref0, "#f4a3a3", None), (mrpi1, xref1, "#d62728", "largest invariant"),
        (term0, xref0, "#9fdfe8", None), (term1, xref1, "#17becf", "terminal set"),
    ]:
        verts = poly.vertices() + shift
        chart.polygon(np.vstack([verts, verts[:1]]), fill="none", stroke=color,
                      opacity=1.0, label=label)
    traj = np.array(trajectory)
    min_verts = minimal_set.vertices()
    stride = max(1, len(traj) // 120)
    for point in traj[::stride]:
        chart.polygon(min_verts + point, fill="#e6b400", opacity=0.12)
    chart.polyline(traj[:, 0], traj[:, 1], "#222222", width=1.0, label="trajectory")
    chart.scatter([xref0[0]], [xref0[1]], "#222222", radius=4)
    chart.scatter([xref1[0]], [xref1[1]], "#888888", radius=4, label="reference start/end")
    chart.save(fig_sets)

    fig_noise = os.path.join(out_dir, "fig_tube_noise.svg")
    chart = Chart(title="Noise set estimate", xlabel="w1", ylabel="w2")
    chart.polygon(np.vstack([oct_verts, oct_verts[:1]]), fill="#cccccc",
                  stroke="#888888", opacity=0.35, label="true noise set")
    chart.scatter(residual_log[:, 0], residual_log[:, 1], "#222222", radius=1.4,
                  label="residual samples")
    from .polytope import _convex_hull_2d

    hull = _convex_hull_2d(residual_log)
    chart.polyline(np.append(hull[:, 0], hull[0, 0]), np.append(hull[:, 1], hull[0, 1]),
                   "#d62728", label="sample hull")
    w_verts = noise_set.vertices()
    chart.polygon(np.vstack([w_verts, w_verts[:1]]), fill="none", stroke="#17becf",
                  opacity=1.0, label="fitted noise set")
    chart.save(fig_noise)

    arr = np.array([r[:13] for r in log_rows], dtype=float) if log_rows else np.zeros((0, 13))
    fig_params = os.path.join(out_dir, "fig_tube_params.svg")
    chart = Chart(title="Tube MPC parameters", xlabel="epoch", ylabel="value")
    if arr.size:
        for col, color, label in [(1, "#1f77b4", "h_11"), (4, "#ff7f0e", "h_22"),
                                  (6, "#2ca02c", "h_uu"), (7, "#d62728", "xr_1"),
                                  (8, "#9467bd", "xr_2")]:
            chart.polyline(arr[:, 0], arr[:, col], color, label=label)
    chart.save(fig_params)
    fig_td = os.path.join(out_dir, "fig_tube_td.svg")
    chart = Chart(title="Temporal-difference error", xlabel="epoch",
                  ylabel="mean |delta|")
    if log_rows:
        chart.polyline(arr[:, 0], [r[-3] for r in log_rows], "#1f77b4")
    chart.save(fig_td)
    return [fig_sets, fig_noise, fig_params, fig_td]


RUNNERS = {
    "analytic-lqr": run_analytic_lqr,
    "qlearn-lqr": run_qlearn_lqr,
    "cstr": run_cstr,
    "tube": run_tube,
}


def run_experiment(name: str, cfg: dict, out_dir: str) -> dict:
    return RUNNERS[name](cfg, out_dir)
