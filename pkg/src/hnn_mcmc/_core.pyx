# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled HMC / efficient-NUTS kernels for the built-in targets and sine networks.

Mirrors the reference implementation in ``samplers.py`` operation for
operation, including the order in which random numbers are drawn from the
caller's numpy BitGenerator, so both backends produce the same chains.
"""
import numpy as np

from cpython.pycapsule cimport PyCapsule_GetPointer, PyCapsule_IsValid
from libc.math cimport sin, cos, exp, log, log1p, sqrt, isfinite, INFINITY, NAN
from libc.stdlib cimport malloc, calloc, free
from libc.string cimport memcpy
from numpy.random cimport bitgen_t
from numpy.random.c_distributions cimport random_standard_normal, random_standard_uniform

cdef enum:
    KIND_GAUSSIAN = 0
    KIND_ROSENBROCK = 1
    KIND_MIXTURE = 2
    KIND_ROUGH_WELL = 3
    KIND_FUNNEL = 4
    KIND_LOGISTIC = 5


cdef struct Target:
    int kind
    int d
    const double* params
    const double* X
    const double* y
    int K


cdef struct Net:
    int L              # number of weight matrices
    int d
    int* sizes         # L + 1 widths
    const double** W   # (out, in) row-major, borrowed
    double** Wt        # (in, out) row-major, owned
    const double** b
    double* c          # column sums of the output layer
    double** act       # hidden pre-activations
    double* u
    double* gbuf1
    double* gbuf2


cdef struct Point:
    double* q
    double* p
    double* gt
    double* gn
    int has_gt
    int has_gn


cdef struct Ctx:
    int d
    double dt
    const double* minv
    Target* t
    Net* net
    int use_net
    int monitored
    double dmax_lf
    double dmax_hnn
    int hnn_forced
    int flag
    int used_lf
    double eps_max
    long long n_tgrad
    long long n_ngrad
    long long n_pot
    long long n_fallback
    long long n_netsteps
    bitgen_t* rng
    Point* tm
    Point* tp
    Point* tprop


# -- targets ------------------------------------------------------------------

cdef inline double log1pexp(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double logaddexp(double a, double b) noexcept nogil:
    if a == b:
        return a + 0.6931471805599453
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


cdef double t_potential(Target* t, const double* q) noexcept nogil:
    cdef int i, k, d = t.d
    cdef double s = 0.0, a, b, x, s2, m
    if t.kind == KIND_GAUSSIAN:
        for i in range(d):
            s += q[i] * t.params[i] * q[i]
        return 0.5 * s
    elif t.kind == KIND_ROSENBROCK:
        for i in range(d - 1):
            a = q[i + 1] - q[i] * q[i]
            b = 1.0 - q[i]
            s += 100.0 * a * a + b * b
        return s / 20.0
    elif t.kind == KIND_MIXTURE:
        x = q[0]
        s2 = t.params[1] * t.params[1]
        a = -((x - t.params[0]) * (x - t.params[0])) / (2.0 * s2)
        b = -((x + t.params[0]) * (x + t.params[0])) / (2.0 * s2)
        return -(logaddexp(a, b) + t.params[2])
    elif t.kind == KIND_ROUGH_WELL:
        a = 0.0
        for i in range(d):
            s += q[i] * q[i]
            a += cos(q[i] / t.params[0])
        return 0.5 * s + t.params[0] * a
    elif t.kind == KIND_FUNNEL:
        return q[0] * q[0] / 18.0 + 0.5 * q[1] * q[1] * exp(-q[0]) + 0.5 * q[0]
    elif t.kind == KIND_LOGISTIC:
        for k in range(t.K):
            m = 0.0
            for i in range(d):
                m += t.X[k * d + i] * q[i]
            s += log1pexp(-(t.y[k] * m))
        a = 0.0
        for i in range(d):
            a += q[i] * q[i]
        return s + 0.5 * a
    return NAN


cdef void t_grad(Target* t, const double* q, double* g) noexcept nogil:
    cdef int i, k, d = t.d
    cdef double a, b, x, s2, lse, wa, wb, e, m, w
    if t.kind == KIND_GAUSSIAN:
        for i in range(d):
            g[i] = q[i] * t.params[i]
    elif t.kind == KIND_ROSENBROCK:
        for i in range(d):
            g[i] = 0.0
        for i in range(d - 1):
            a = q[i + 1] - q[i] * q[i]
            g[i] = (-400.0 * a * q[i] - 2.0 * (1.0 - q[i])) / 20.0
        for i in range(d - 1):
            a = q[i + 1] - q[i] * q[i]
            g[i + 1] += 200.0 * a / 20.0
    elif t.kind == KIND_MIXTURE:
        x = q[0]
        s2 = t.params[1] * t.params[1]
        a = -((x - t.params[0]) * (x - t.params[0])) / (2.0 * s2)
        b = -((x + t.params[0]) * (x + t.params[0])) / (2.0 * s2)
        lse = logaddexp(a, b)
        wa = exp(a - lse)
        wb = exp(b - lse)
        g[0] = (wa * (x - t.params[0]) + wb * (x + t.params[0])) / s2
    elif t.kind == KIND_ROUGH_WELL:
        for i in range(d):
            g[i] = q[i] - sin(q[i] / t.params[0])
    elif t.kind == KIND_FUNNEL:
        e = exp(-q[0])
        g[0] = q[0] / 9.0 - 0.5 * q[1] * q[1] * e + 0.5
        g[1] = q[1] * e
    elif t.kind == KIND_LOGISTIC:
        for i in range(d):
            g[i] = 0.0
        for k in range(t.K):
            m = 0.0
            for i in range(d):
                m += t.X[k * d + i] * q[i]
            w = -t.y[k] * exp(-log1pexp(t.y[k] * m))
            for i in range(d):
                g[i] += t.X[k * d + i] * w
        for i in range(d):
            g[i] += q[i]
    else:
        for i in range(d):
            g[i] = NAN


# -- network ------------------------------------------------------------------

cdef void net_grad_q(Net* n, const double* q, double* out) noexcept nogil:
    """Position block of the input gradient at z = (q, 0)."""
    cdef int P = n.L - 1
    cdef int d = n.d
    cdef int l, i, k, hin, hout
    cdef const double* row
    cdef double* wrow
    cdef double* act
    cdef double* delta
    cdef double* nxt
    cdef double* tmp
    cdef double v
    hout = n.sizes[1]
    act = n.act[0]
    for i in range(hout):
        act[i] = n.b[0][i]
    for k in range(d):
        v = q[k]
        wrow = n.Wt[0] + k * hout
        for i in range(hout):
            act[i] += wrow[i] * v
    for l in range(1, P):
        hin = n.sizes[l]
        hout = n.sizes[l + 1]
        for k in range(hin):
            n.u[k] = sin(n.act[l - 1][k])
        act = n.act[l]
        for i in range(hout):
            act[i] = n.b[l][i]
        for k in range(hin):
            v = n.u[k]
            wrow = n.Wt[l] + k * hout
            for i in range(hout):
                act[i] += wrow[i] * v
    delta = n.gbuf1
    nxt = n.gbuf2
    for i in range(n.sizes[P]):
        delta[i] = n.c[i]
    for l in range(P - 1, 0, -1):
        hin = n.sizes[l]
        hout = n.sizes[l + 1]
        for k in range(hin):
            nxt[k] = 0.0
        for i in range(hout):
            v = delta[i] * cos(n.act[l][i])
            row = n.W[l] + i * hin
            for k in range(hin):
                nxt[k] += row[k] * v
        tmp = delta
        delta = nxt
        nxt = tmp
    hin = n.sizes[0]
    hout = n.sizes[1]
    for k in range(d):
        out[k] = 0.0
    for i in range(hout):
        v = delta[i] * cos(n.act[0][i])
        row = n.W[0] + i * hin
        for k in range(d):
            out[k] += row[k] * v


cdef class _NetHolder:
    """Owns the C view of a network; keeps the numpy arrays alive."""
    cdef Net net
    cdef list keep

    def __cinit__(self, weights, biases):
        cdef int L = len(weights)
        cdef int i, j, r, cc, maxw
        cdef double[:, ::1] Wv
        cdef double[::1] bv
        self.keep = []
        self.net.L = L
        self.net.sizes = <int*> calloc(L + 1, sizeof(int))
        self.net.W = <const double**> calloc(L, sizeof(double*))
        self.net.Wt = <double**> calloc(L, sizeof(double*))
        self.net.b = <const double**> calloc(L, sizeof(double*))
        self.net.act = <double**> calloc(L, sizeof(double*))
        if L < 2:
            raise ValueError("network needs at least one hidden layer")
        maxw = 0
        for i in range(L):
            W = np.ascontiguousarray(weights[i], dtype=np.float64)
            b = np.ascontiguousarray(biases[i], dtype=np.float64)
            self.keep += [W, b]
            Wv = W
            bv = b
            r = W.shape[0]
            cc = W.shape[1]
            if i == 0:
                self.net.sizes[0] = cc
            self.net.sizes[i + 1] = r
            maxw = max(maxw, r, cc)
            self.net.W[i] = &Wv[0, 0]
            self.net.b[i] = &bv[0]
            self.net.Wt[i] = <double*> malloc(r * cc * sizeof(double))
            for j in range(r):
                for k in range(cc):
                    self.net.Wt[i][k * r + j] = Wv[j, k]
            self.net.act[i] = <double*> calloc(r, sizeof(double))
        self.net.d = self.net.sizes[0] // 2
        self.net.u = <double*> calloc(maxw, sizeof(double))
        self.net.gbuf1 = <double*> calloc(maxw, sizeof(double))
        self.net.gbuf2 = <double*> calloc(maxw, sizeof(double))
        self.net.c = <double*> calloc(self.net.sizes[L - 1], sizeof(double))
        Wv = self.keep[2 * (L - 1)]
        for j in range(Wv.shape[0]):
            for k in range(Wv.shape[1]):
                self.net.c[k] += Wv[j, k]

    def __dealloc__(self):
        cdef int i
        if self.net.Wt != NULL:
            for i in range(self.net.L):
                free(self.net.Wt[i])
                free(self.net.act[i])
        free(self.net.Wt)
        free(self.net.act)
        free(self.net.W)
        free(self.net.b)
        free(self.net.sizes)
        free(self.net.u)
        free(self.net.gbuf1)
        free(self.net.gbuf2)
        free(self.net.c)


cdef class _TargetHolder:
    cdef Target t
    cdef list keep

    def __cinit__(self, int kind, int d, params, X, y):
        cdef double[::1] pv
        cdef double[:, ::1] Xv
        cdef double[::1] yv
        self.keep = []
        self.t.kind = kind
        self.t.d = d
        self.t.params = NULL
        self.t.X = NULL
        self.t.y = NULL
        self.t.K = 0
        params = np.ascontiguousarray(params, dtype=np.float64)
        self.keep.append(params)
        if params.size:
            pv = params
            self.t.params = &pv[0]
        if kind == KIND_LOGISTIC:
            X = np.ascontiguousarray(X, dtype=np.float64)
            y = np.ascontiguousarray(y, dtype=np.float64)
            self.keep += [X, y]
            Xv = X
            yv = y
            if X.shape[1] != d or X.shape[0] != y.shape[0]:
                raise ValueError("logistic data shape mismatch")
            self.t.X = &Xv[0, 0]
            self.t.y = &yv[0]
            self.t.K = X.shape[0]
        elif kind == KIND_GAUSSIAN and params.size != d:
            raise ValueError("gaussian precision length mismatch")


# -- points -------------------------------------------------------------------

cdef struct Pool:
    double* mem
    Point* pts


cdef int pool_init(Pool* pool, int n, int d):
    cdef int i
    pool.mem = <double*> calloc(n * 4 * d, sizeof(double))
    pool.pts = <Point*> calloc(n, sizeof(Point))
    if pool.mem == NULL or pool.pts == NULL:
        return -1
    for i in range(n):
        pool.pts[i].q = pool.mem + (4 * i) * d
        pool.pts[i].p = pool.mem + (4 * i + 1) * d
        pool.pts[i].gt = pool.mem + (4 * i + 2) * d
        pool.pts[i].gn = pool.mem + (4 * i + 3) * d
        pool.pts[i].has_gt = 0
        pool.pts[i].has_gn = 0
    return 0


cdef void pool_free(Pool* pool):
    free(pool.mem)
    free(pool.pts)


cdef inline void copy_point(Point* dst, Point* src, int d) noexcept nogil:
    memcpy(dst.q, src.q, d * sizeof(double))
    memcpy(dst.p, src.p, d * sizeof(double))
    if src.has_gt:
        memcpy(dst.gt, src.gt, d * sizeof(double))
    if src.has_gn:
        memcpy(dst.gn, src.gn, d * sizeof(double))
    dst.has_gt = src.has_gt
    dst.has_gn = src.has_gn


cdef inline double* get_gt(Ctx* c, Point* pt) noexcept nogil:
    if not pt.has_gt:
        t_grad(c.t, pt.q, pt.gt)
        pt.has_gt = 1
        c.n_tgrad += 1
    return pt.gt


cdef inline double* get_gn(Ctx* c, Point* pt) noexcept nogil:
    if not pt.has_gn:
        net_grad_q(c.net, pt.q, pt.gn)
        pt.has_gn = 1
        c.n_ngrad += 1
    return pt.gn


cdef void lf_step(Ctx* c, Point* src, Point* dst, double h, int use_net) noexcept nogil:
    cdef int i, d = c.d
    cdef double* g0
    cdef double* g1
    if use_net:
        g0 = get_gn(c, src)
    else:
        g0 = get_gt(c, src)
    for i in range(d):
        dst.q[i] = src.q[i] + h * src.p[i] * c.minv[i] - 0.5 * h * h * c.minv[i] * g0[i]
    if use_net:
        net_grad_q(c.net, dst.q, dst.gn)
        c.n_ngrad += 1
        dst.has_gn = 1
        dst.has_gt = 0
        g1 = dst.gn
    else:
        t_grad(c.t, dst.q, dst.gt)
        c.n_tgrad += 1
        dst.has_gt = 1
        dst.has_gn = 0
        g1 = dst.gt
    for i in range(d):
        dst.p[i] = src.p[i] - 0.5 * h * (g0[i] + g1[i])


cdef inline double kinetic(Ctx* c, const double* p) noexcept nogil:
    cdef int i
    cdef double s = 0.0
    for i in range(c.d):
        s += p[i] * p[i] * c.minv[i]
    return 0.5 * s


cdef inline double hamiltonian(Ctx* c, Point* pt) noexcept nogil:
    c.n_pot += 1
    return t_potential(c.t, pt.q) + kinetic(c, pt.p)


cdef inline int no_uturn(Ctx* c, Point* mi, Point* pl) noexcept nogil:
    cdef int i
    cdef double a = 0.0, b = 0.0, dq
    for i in range(c.d):
        dq = pl.q[i] - mi.q[i]
        a += dq * (mi.p[i] * c.minv[i])
        b += dq * (pl.p[i] * c.minv[i])
    return a >= 0.0 and b >= 0.0


cdef inline void track(Ctx* c, double eps) noexcept nogil:
    if eps > c.eps_max:
        c.eps_max = eps


cdef int base_case(Ctx* c, Point* start, int v, double log_u, Point* out, double* n_out) noexcept nogil:
    cdef double h = v * c.dt
    cdef double H = NAN, eps
    cdef int s = 0
    if c.monitored and not c.flag:
        lf_step(c, start, out, h, 1)
        c.n_netsteps += 1
        H = hamiltonian(c, out)
        eps = H + log_u
        track(c, eps)
        if c.hnn_forced or not (eps <= c.dmax_hnn):
            c.flag = 1
        else:
            s = 1
    if not c.monitored or c.flag:
        lf_step(c, start, out, h, c.use_net and not c.monitored)
        if c.monitored:
            c.n_fallback += 1
            c.used_lf = 1
        elif c.use_net:
            c.n_netsteps += 1
        H = hamiltonian(c, out)
        eps = H + log_u
        track(c, eps)
        s = eps <= c.dmax_lf
    if isfinite(H) and log_u <= -H:
        n_out[0] = 1.0
    else:
        n_out[0] = 0.0
    if not isfinite(H):
        s = 0
    return s


cdef int build(Ctx* c, Point* start, double log_u, int v, int j,
               Point* om, Point* op, Point* oprop, double* n_out) noexcept nogil:
    cdef double n1, n2, tot, prob
    cdef int s1, s2
    cdef Point* tm
    cdef Point* tp
    cdef Point* tprop
    if j == 0:
        s1 = base_case(c, start, v, log_u, om, n_out)
        copy_point(op, om, c.d)
        copy_point(oprop, om, c.d)
        return s1
    s1 = build(c, start, log_u, v, j - 1, om, op, oprop, &n1)
    if s1:
        tm = &c.tm[j]
        tp = &c.tp[j]
        tprop = &c.tprop[j]
        if v == -1:
            s2 = build(c, om, log_u, v, j - 1, tm, tp, tprop, &n2)
            copy_point(om, tm, c.d)
        else:
            s2 = build(c, op, log_u, v, j - 1, tm, tp, tprop, &n2)
            copy_point(op, tp, c.d)
        tot = n1 + n2
        prob = n2 / tot if tot > 0 else 0.0
        if random_standard_uniform(c.rng) < prob:
            copy_point(oprop, tprop, c.d)
        s1 = s2 and no_uturn(c, om, op)
        n1 = tot
    n_out[0] = n1
    return s1


cdef bitgen_t* _bitgen(rng) except NULL:
    capsule = rng.bit_generator.capsule
    if not PyCapsule_IsValid(capsule, "BitGenerator"):
        raise ValueError("invalid BitGenerator capsule")
    return <bitgen_t*> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef void ctx_init(Ctx* c, int d, double dt, const double* minv, Target* t, Net* net,
                   int use_net, int monitored, double dmax_lf, double dmax_hnn, bitgen_t* rng):
    c.d = d
    c.dt = dt
    c.minv = minv
    c.t = t
    c.net = net
    c.use_net = use_net
    c.monitored = monitored
    c.dmax_lf = dmax_lf
    c.dmax_hnn = dmax_hnn
    c.hnn_forced = dmax_hnn == -INFINITY
    c.flag = 0
    c.used_lf = 0
    c.eps_max = -INFINITY
    c.n_tgrad = 0
    c.n_ngrad = 0
    c.n_pot = 0
    c.n_fallback = 0
    c.n_netsteps = 0
    c.rng = rng


cdef dict _counts(Ctx* c):
    return {
        "target_grad": c.n_tgrad,
        "network_grad": c.n_ngrad,
        "potential": c.n_pot,
        "fallback_steps": c.n_fallback,
        "network_steps": c.n_netsteps,
    }


cdef Net* _net_ptr(object holder):
    if holder is None:
        return NULL
    return &(<_NetHolder> holder).net


def make_target(int kind, int d, params, X, y):
    return _TargetHolder(kind, d, params, X, y)


def make_network(weights, biases):
    return _NetHolder(weights, biases)


def target_eval(_TargetHolder th, double[::1] q):
    """Potential and gradient through the compiled kernels (for testing)."""
    g = np.empty(th.t.d)
    cdef double[::1] gv = g
    cdef double u = t_potential(&th.t, &q[0])
    t_grad(&th.t, &q[0], &gv[0])
    return u, g


def network_grad_q(_NetHolder nh, double[::1] q):
    g = np.empty(nh.net.d)
    cdef double[::1] gv = g
    net_grad_q(&nh.net, &q[0], &gv[0])
    return g


def nuts(_TargetHolder th, object net_holder, double[::1] q0, double[::1] minv, double[::1] sqrt_m,
         double dt, int M, int max_depth, double dmax_lf, double dmax_hnn, int n_lf_max,
         bint use_net, bint monitored, rng,
         double[:, ::1] out_q, int[::1] out_depth, unsigned char[::1] out_fallback,
         double[::1] out_eps):
    """Run ``M`` efficient-NUTS transitions; fills the output arrays in place."""
    cdef int d = th.t.d
    cdef Ctx c
    cdef Pool pool
    cdef int npts = 3 * (max_depth + 1) + 8
    cdef Point* P
    cdef Point *cur
    cdef Point *minus
    cdef Point *plus
    cdef Point *prop
    cdef Point *top_m
    cdef Point *top_p
    cdef Point *top_prop
    cdef int i, k, j, v, s, s1, n_lf = 0, need_net
    cdef double n, n1, H0, u, log_u, prob
    cdef Net* netp = _net_ptr(net_holder)
    cdef bitgen_t* bg = _bitgen(rng)
    if use_net and netp == NULL:
        raise ValueError("network kernels requested without a network")
    if pool_init(&pool, npts, d) != 0:
        pool_free(&pool)
        raise MemoryError()
    P = pool.pts
    ctx_init(&c, d, dt, &minv[0], &th.t, netp, use_net, monitored, dmax_lf, dmax_hnn, bg)
    c.tm = &P[0]
    c.tp = &P[max_depth + 1]
    c.tprop = &P[2 * (max_depth + 1)]
    k = 3 * (max_depth + 1)
    cur = &P[k]
    minus = &P[k + 1]
    plus = &P[k + 2]
    prop = &P[k + 3]
    top_m = &P[k + 4]
    top_p = &P[k + 5]
    top_prop = &P[k + 6]
    for k in range(d):
        cur.q[k] = q0[k]
    try:
        with rng.bit_generator.lock, nogil:
            for i in range(M):
                if c.flag:
                    n_lf += 1
                if n_lf == n_lf_max:
                    c.flag = 0
                    n_lf = 0
                need_net = use_net and not (monitored and c.flag)
                if need_net:
                    get_gn(&c, cur)
                else:
                    get_gt(&c, cur)
                copy_point(minus, cur, d)
                for k in range(d):
                    minus.p[k] = random_standard_normal(bg) * sqrt_m[k]
                H0 = hamiltonian(&c, minus)
                u = random_standard_uniform(bg)
                log_u = -H0 + (log(u) if u > 0 else -INFINITY)
                copy_point(plus, minus, d)
                copy_point(prop, cur, d)
                n = 1.0
                s = 1
                j = 0
                c.used_lf = 0
                c.eps_max = -INFINITY
                while s and j < max_depth:
                    v = -1 if random_standard_uniform(bg) < 0.5 else 1
                    if v == -1:
                        s1 = build(&c, minus, log_u, v, j, top_m, top_p, top_prop, &n1)
                        copy_point(minus, top_m, d)
                    else:
                        s1 = build(&c, plus, log_u, v, j, top_m, top_p, top_prop, &n1)
                        copy_point(plus, top_p, d)
                    if s1:
                        prob = n1 / n
                        if prob > 1.0:
                            prob = 1.0
                        if random_standard_uniform(bg) < prob:
                            copy_point(prop, top_prop, d)
                    n += n1
                    s = s1 and no_uturn(&c, minus, plus)
                    j += 1
                copy_point(cur, prop, d)
                for k in range(d):
                    out_q[i, k] = cur.q[k]
                out_depth[i] = j
                out_fallback[i] = c.used_lf
                out_eps[i] = c.eps_max
    finally:
        pool_free(&pool)
    return _counts(&c)


def hmc(_TargetHolder th, object net_holder, double[::1] q0, double[::1] minv, double[::1] sqrt_m,
        double dt, int n_steps, int M, bint use_net, rng,
        double[:, ::1] out_q, double[::1] out_alpha, unsigned char[::1] out_accept,
        double[::1] out_dh):
    """Run ``M`` HMC transitions with ``n_steps`` leapfrog steps each."""
    cdef int d = th.t.d
    cdef Ctx c
    cdef Pool pool
    cdef Point* cur
    cdef Point* a
    cdef Point* b
    cdef Point* tmp
    cdef int i, k, st
    cdef double H0, H1, alpha, u
    cdef Net* netp = _net_ptr(net_holder)
    cdef bitgen_t* bg = _bitgen(rng)
    if use_net and netp == NULL:
        raise ValueError("network kernels requested without a network")
    if pool_init(&pool, 3, d) != 0:
        pool_free(&pool)
        raise MemoryError()
    ctx_init(&c, d, dt, &minv[0], &th.t, netp, use_net, 0, INFINITY, INFINITY, bg)
    cur = &pool.pts[0]
    for k in range(d):
        cur.q[k] = q0[k]
    try:
        with rng.bit_generator.lock, nogil:
            for i in range(M):
                if use_net:
                    get_gn(&c, cur)
                else:
                    get_gt(&c, cur)
                a = &pool.pts[1]
                b = &pool.pts[2]
                copy_point(a, cur, d)
                for k in range(d):
                    a.p[k] = random_standard_normal(bg) * sqrt_m[k]
                H0 = hamiltonian(&c, a)
                for st in range(n_steps):
                    lf_step(&c, a, b, dt, use_net)
                    tmp = a
                    a = b
                    b = tmp
                H1 = hamiltonian(&c, a)
                if isfinite(H0) and isfinite(H1):
                    alpha = exp(H0 - H1) if H0 - H1 < 0.0 else 1.0
                else:
                    alpha = 0.0
                u = random_standard_uniform(bg)
                if u < alpha:
                    copy_point(cur, a, d)
                    out_accept[i] = 1
                else:
                    out_accept[i] = 0
                out_alpha[i] = alpha
                out_dh[i] = H1 - H0
                for k in range(d):
                    out_q[i, k] = cur.q[k]
    finally:
        pool_free(&pool)
    return _counts(&c)
