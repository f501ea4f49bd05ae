"""Small warm-startable LP layer used by the allocator.

Wraps the HiGHS bindings that ship inside scipy. The allocator re-solves
the same model hundreds of times per decision with only costs, bounds and
right-hand sides changing, so keeping one solver instance alive (HiGHS
reuses the last basis) is worth roughly an order of magnitude over calling
scipy.optimize.linprog per solve. If the bindings are unavailable we fall
back to linprog, which is slower but gives identical answers.
"""
from __future__ import annotations

import numpy as np

try:
    from scipy.optimize._highspy import _core as _hs
except ImportError:  # pragma: no cover - depends on scipy build
    _hs = None


class LpError(RuntimeError):
    pass


class LinearProgram:
    """maximize c.x  subject to  row_lb <= A x <= row_ub,  lb <= x <= ub.

    A is given column-wise (CSC-style arrays). All mutators invalidate the
    cached solution; solve() refreshes it.
    """

    def __init__(self, ncol, nrow, costs, col_lb, col_ub, row_lb, row_ub,
                 a_start, a_index, a_value):
        self.ncol = int(ncol)
        self.nrow = int(nrow)
        self._costs = np.asarray(costs, dtype=float).copy()
        self._col_lb = np.asarray(col_lb, dtype=float).copy()
        self._col_ub = np.asarray(col_ub, dtype=float).copy()
        self._row_lb = np.asarray(row_lb, dtype=float).copy()
        self._row_ub = np.asarray(row_ub, dtype=float).copy()
        self._a_start = np.asarray(a_start, dtype=np.int64)
        self._a_index = np.asarray(a_index, dtype=np.int64)
        self._a_value = np.asarray(a_value, dtype=float)
        self._sol = None
        self._backend = "highs" if _hs is not None else "linprog"
        if _hs is not None:
            self._h = self._build_highs()

    def _build_highs(self):
        lp = _hs.HighsLp()
        lp.num_col_ = self.ncol
        lp.num_row_ = self.nrow
        lp.col_cost_ = self._costs
        lp.col_lower_ = self._col_lb
        lp.col_upper_ = self._col_ub
        lp.row_lower_ = self._row_lb
        lp.row_upper_ = self._row_ub
        lp.a_matrix_.format_ = _hs.MatrixFormat.kColwise
        lp.a_matrix_.start_ = self._a_start
        lp.a_matrix_.index_ = self._a_index
        lp.a_matrix_.value_ = self._a_value
        lp.sense_ = _hs.ObjSense.kMaximize
        h = _hs._Highs()
        h.setOptionValue("output_flag", False)
        h.setOptionValue("presolve", "off")
        h.setOptionValue("solver", "simplex")
        status = h.passModel(lp)
        if status == _hs.HighsStatus.kError:
            raise LpError("failed to load LP model")
        return h

    # -- mutators -----------------------------------------------------

    def set_costs(self, indices, values) -> None:
        idx = np.asarray(indices, dtype=np.int32)
        vals = np.asarray(values, dtype=float)
        self._costs[idx] = vals
        if self._backend == "highs":
            self._h.changeColsCost(len(idx), idx, vals)
        self._sol = None

    def set_col_bounds(self, indices, lower, upper) -> None:
        idx = np.asarray(indices, dtype=np.int32)
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        self._col_lb[idx] = lo
        self._col_ub[idx] = hi
        if self._backend == "highs":
            self._h.changeColsBounds(len(idx), idx, lo, hi)
        self._sol = None

    def set_row_bounds(self, index, lower, upper) -> None:
        self._row_lb[index] = lower
        self._row_ub[index] = upper
        if self._backend == "highs":
            self._h.changeRowBounds(int(index), float(lower), float(upper))
        self._sol = None

    # -- solving ------------------------------------------------------

    def solve(self):
        """Solve and return (objective, x, row_duals, row_values)."""
        if self._sol is not None:
            return self._sol
        if self._backend == "highs":
            self._h.run()
            status = self._h.getModelStatus()
            if status != _hs.HighsModelStatus.kOptimal:
                raise LpError(f"LP not optimal: {self._h.modelStatusToString(status)}")
            sol = self._h.getSolution()
            obj = self._h.getInfo().objective_function_value
            self._sol = (float(obj),
                         np.asarray(sol.col_value, dtype=float),
                         np.asarray(sol.row_dual, dtype=float),
                         np.asarray(sol.row_value, dtype=float))
        else:
            self._sol = self._solve_linprog()
        return self._sol

    def objective(self) -> float:
        return self.solve()[0]

    def _solve_linprog(self):
        from scipy.optimize import linprog
        from scipy.sparse import csc_matrix

        a = csc_matrix((self._a_value, self._a_index,
                        self._a_start), shape=(self.nrow, self.ncol))
        # split two-sided rows into <= pairs; equalities go to A_eq
        ub_rows = np.isfinite(self._row_ub) & (self._row_ub != self._row_lb)
        lb_rows = np.isfinite(self._row_lb) & (self._row_ub != self._row_lb)
        eq_rows = np.isfinite(self._row_lb) & (self._row_lb == self._row_ub)
        a_ub_parts, b_ub_parts = [], []
        if ub_rows.any():
            a_ub_parts.append(a[ub_rows])
            b_ub_parts.append(self._row_ub[ub_rows])
        if lb_rows.any():
            a_ub_parts.append(-a[lb_rows])
            b_ub_parts.append(-self._row_lb[lb_rows])
        from scipy.sparse import vstack
        a_ub = vstack(a_ub_parts) if a_ub_parts else None
        b_ub = np.concatenate(b_ub_parts) if b_ub_parts else None
        a_eq = a[eq_rows] if eq_rows.any() else None
        b_eq = self._row_ub[eq_rows] if eq_rows.any() else None
        res = linprog(-self._costs, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                      bounds=np.column_stack([self._col_lb, self._col_ub]),
                      method="highs")
        if not res.success:
            raise LpError(f"LP not optimal: {res.message}")
        duals = np.zeros(self.nrow)
        if a_ub is not None:
            marg = np.asarray(res.ineqlin.marginals)
            n_up = int(ub_rows.sum())
            duals[np.where(ub_rows)[0]] = -marg[:n_up]
            duals[np.where(lb_rows)[0]] += marg[n_up:]
        if a_eq is not None:
            duals[np.where(eq_rows)[0]] = -np.asarray(res.eqlin.marginals)
        row_vals = a @ res.x
        return (-float(res.fun), res.x, duals, row_vals)
