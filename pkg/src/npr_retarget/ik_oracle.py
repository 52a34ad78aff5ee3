"""Per-frame numerical IK: minimize the NPR loss over the 21 commanded joints.

This solver is the toolkit's verification oracle: the angle signal network
is judged against it. It runs plain gradient descent with Armijo
backtracking on sigmoid-reparameterized joint variables, so iterates live in
the same box-free geometry as the network's bounded output layer and the
returned command always respects the joint limits structurally. Multi-start
(home pose plus uniform random poses, plus an optional warm start) guards
against local minima; all restarts advance together as one batched descent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .descriptor import PoseDescriptor, flatten
from .errors import SolverError, ValidationError
from .npr import NprWeights, npr_grad_batch, npr_loss_batch
from .robot import RobotModel, limits_to_raw, sigmoid_to_limits, sigmoid_to_limits_grad
from .descriptor import robot_descriptors_of_commands


@dataclass(frozen=True)
class SolverConfig:
    max_iters: int = 500
    restarts: int = 8  # total starts: home pose + (restarts - 1) random
    seed: int = 0
    grad_tol: float = 1e-7
    loss_tol: float = 1e-8
    step_size: float = 1.0  # initial Armijo step, halved on rejection
    armijo_c: float = 1e-4
    max_backtracks: int = 30
    warm_start: bool = True
    init_margin: float = 0.01  # fraction of range the raw init stays inside


@dataclass
class SolveReport:
    q: np.ndarray  # (21,) command, within limits
    final_loss: float
    iterations: int  # outer iterations of the winning restart
    converged: bool  # ended on a gradient/loss/stall criterion, not the cap
    restarts_used: int
    error: Optional[str] = None


def _as_target(target) -> np.ndarray:
    if isinstance(target, PoseDescriptor):
        return flatten(target)
    t = np.asarray(target, dtype=float)
    if t.shape != (28,):
        raise ValidationError(f"target descriptor must have shape (28,), got {t.shape}")
    return t


def _start_pool(model: RobotModel, cfg: SolverConfig, extra: Optional[Sequence[np.ndarray]]) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    lo, hi = model.lo_cmd, model.hi_cmd
    span = hi - lo
    starts = list(extra or [])
    home = np.clip(np.zeros(len(lo)), lo + cfg.init_margin * span, hi - cfg.init_margin * span)
    starts.append(home)
    for _ in range(max(cfg.restarts - 1, 0)):
        starts.append(lo + cfg.init_margin * span + rng.random(len(lo)) * (1 - 2 * cfg.init_margin) * span)
    return np.stack(starts)


def solve(
    target,
    model: RobotModel,
    w: NprWeights,
    cfg: Optional[SolverConfig] = None,
    extra_starts: Optional[Sequence[np.ndarray]] = None,
) -> SolveReport:
    """Best-of-restarts gradient descent toward a target descriptor.

    Restart ties are broken toward the earliest start in the pool, which
    puts a warm start (when supplied) ahead of everything else.
    """
    cfg = cfg or SolverConfig()
    t28 = _as_target(target)
    lo, hi = model.lo_cmd, model.hi_cmd

    q0 = _start_pool(model, cfg, extra_starts)
    raw = limits_to_raw(q0, lo, hi, margin=cfg.init_margin)
    B = raw.shape[0]
    targets = np.broadcast_to(t28, (B, 28))

    def eval_loss_grad(r: np.ndarray):
        q = sigmoid_to_limits(r, lo, hi)
        loss, g_q = npr_grad_batch(targets, q, model, w)
        return loss, g_q * sigmoid_to_limits_grad(r, lo, hi)

    loss, grad = eval_loss_grad(raw)
    if not np.all(np.isfinite(loss)):
        raise SolverError("non-finite loss at the initial points")

    term_iter = np.zeros(B, dtype=int)
    term_ok = np.zeros(B, dtype=bool)  # ended on grad/loss/stall, not the cap
    active = np.ones(B, dtype=bool)

    # Cheap escape for warm starts and already-solved targets.
    if float(loss.min()) < cfg.loss_tol:
        i = int(np.argmin(loss))
        return SolveReport(
            q=sigmoid_to_limits(raw[i], lo, hi),
            final_loss=float(loss[i]),
            iterations=0,
            converged=True,
            restarts_used=B,
        )

    it = 0
    for it in range(1, cfg.max_iters + 1):
        gnorm = np.max(np.abs(grad), axis=1)
        newly_done = active & ((gnorm < cfg.grad_tol) | (loss < cfg.loss_tol))
        term_ok |= newly_done
        term_iter[newly_done] = it - 1
        active &= ~newly_done
        if not active.any():
            break

        # Armijo backtracking, all active restarts stepping together.
        step = np.full(B, cfg.step_size)
        accepted = ~active
        new_raw = raw.copy()
        new_loss = loss.copy()
        gsq = np.sum(grad * grad, axis=1)
        for _ in range(cfg.max_backtracks + 1):
            trial = active & ~accepted
            if not trial.any():
                break
            cand = raw[trial] - step[trial, None] * grad[trial]
            cand_loss = npr_loss_batch(
                targets[trial],
                robot_descriptors_of_commands(sigmoid_to_limits(cand, lo, hi), model),
                w,
            )
            if not np.all(np.isfinite(cand_loss)):
                raise SolverError(f"non-finite loss during line search at iteration {it}")
            ok = cand_loss <= loss[trial] - cfg.armijo_c * step[trial] * gsq[trial]
            idx = np.where(trial)[0]
            good = idx[ok]
            new_raw[good] = cand[ok]
            new_loss[good] = cand_loss[ok]
            accepted[good] = True
            step[idx[~ok]] *= 0.5

        stalled = active & ~accepted
        if stalled.any():
            # Cannot decrease along -grad at machine precision: numerically
            # stationary, treat as converged.
            term_ok |= stalled
            term_iter[stalled] = it
            active &= ~stalled

        raw, loss = new_raw, new_loss
        if active.any():
            new_l, new_g = eval_loss_grad(raw)
            loss[active] = new_l[active]
            grad[active] = new_g[active]
            if not np.all(np.isfinite(loss[active])):
                raise SolverError(f"non-finite loss at iteration {it}")

    term_iter[active] = it  # hit the iteration cap

    best = int(np.argmin(loss))
    q_best = sigmoid_to_limits(raw[best], lo, hi)
    if float(loss[best]) < 0:
        raise SolverError("negative loss; numerical corruption")
    return SolveReport(
        q=q_best,
        final_loss=float(loss[best]),
        iterations=int(term_iter[best]),
        converged=bool(term_ok[best]),
        restarts_used=B,
    )


def solve_sequence(
    targets: Sequence,
    model: RobotModel,
    w: NprWeights,
    cfg: Optional[SolverConfig] = None,
) -> List[SolveReport]:
    """Solve a target sequence, warm-starting each frame from the previous
    solution. A failed frame carries its error; the sequence continues."""
    cfg = cfg or SolverConfig()
    if len(targets) == 0:
        raise ValidationError("solve_sequence requires at least one target")
    reports: List[SolveReport] = []
    prev_q: Optional[np.ndarray] = None
    for i, target in enumerate(targets):
        extra = [prev_q] if (cfg.warm_start and prev_q is not None) else None
        try:
            rep = solve(target, model, w, cfg, extra_starts=extra)
        except (SolverError, ValidationError) as exc:
            reports.append(
                SolveReport(
                    q=np.clip(np.zeros(len(model.command_order)), model.lo_cmd, model.hi_cmd),
                    final_loss=math.inf,
                    iterations=0,
                    converged=False,
                    restarts_used=0,
                    error=f"frame {i}: {exc}",
                )
            )
            continue
        prev_q = rep.q
        reports.append(rep)
    return reports
