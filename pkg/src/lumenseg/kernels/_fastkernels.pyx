# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch-gather / patch-scatter loops for the convolution kernels.

Only the memory-bound im2col/col2im passes live here; the wrapper module
feeds the gathered patch matrix to BLAS. Inputs are channels-last and
already padded. Each output element is written by exactly one loop
iteration, so results are deterministic.
"""

cimport cython

ctypedef fused floating:
    float
    double


cpdef void im2col2d(floating[:, :, :, ::1] xp,
                    floating[:, ::1] cols,
                    Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                    Py_ssize_t ph, Py_ssize_t qh) noexcept nogil:
    """Gather (kh,kw,C) patches of xp (b,P,Q,C) into cols (b*ph*qh, kh*kw*C)."""
    cdef Py_ssize_t b = xp.shape[0]
    cdef Py_ssize_t C = xp.shape[3]
    cdef Py_ssize_t n, i, j, u, v, c, row, base
    for n in range(b):
        for i in range(ph):
            for j in range(qh):
                row = (n * ph + i) * qh + j
                for u in range(kh):
                    for v in range(kw):
                        base = (u * kw + v) * C
                        for c in range(C):
                            cols[row, base + c] = xp[n, i * stride + u, j * stride + v, c]


cpdef void col2im2d(floating[:, ::1] gcols,
                    floating[:, :, :, ::1] gxp,
                    Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride,
                    Py_ssize_t ph, Py_ssize_t qh) noexcept nogil:
    """Scatter-add patch gradients back onto the padded input gradient."""
    cdef Py_ssize_t b = gxp.shape[0]
    cdef Py_ssize_t C = gxp.shape[3]
    cdef Py_ssize_t n, i, j, u, v, c, row, base
    for n in range(b):
        for i in range(ph):
            for j in range(qh):
                row = (n * ph + i) * qh + j
                for u in range(kh):
                    for v in range(kw):
                        base = (u * kw + v) * C
                        for c in range(C):
                            gxp[n, i * stride + u, j * stride + v, c] += gcols[row, base + c]


cpdef void im2col3d(floating[:, :, :, :, ::1] x,
                    floating[:, ::1] cols,
                    Py_ssize_t kh, Py_ssize_t kw,
                    Py_ssize_t ph, Py_ssize_t qh) noexcept nogil:
    """Gather full-depth (r,kh,kw,C) patches of x (b,r,P,Q,C)."""
    cdef Py_ssize_t b = x.shape[0]
    cdef Py_ssize_t r = x.shape[1]
    cdef Py_ssize_t C = x.shape[4]
    cdef Py_ssize_t n, i, j, t, u, v, c, row, base
    for n in range(b):
        for i in range(ph):
            for j in range(qh):
                row = (n * ph + i) * qh + j
                for t in range(r):
                    for u in range(kh):
                        for v in range(kw):
                            base = ((t * kh + u) * kw + v) * C
                            for c in range(C):
                                cols[row, base + c] = x[n, t, i + u, j + v, c]


cpdef void col2im3d(floating[:, ::1] gcols,
                    floating[:, :, :, :, ::1] gx,
                    Py_ssize_t kh, Py_ssize_t kw,
                    Py_ssize_t ph, Py_ssize_t qh) noexcept nogil:
    """Scatter-add full-depth patch gradients back onto the input gradient."""
    cdef Py_ssize_t b = gx.shape[0]
    cdef Py_ssize_t r = gx.shape[1]
    cdef Py_ssize_t C = gx.shape[4]
    cdef Py_ssize_t n, i, j, t, u, v, c, row, base
    for n in range(b):
        for i in range(ph):
            for j in range(qh):
                row = (n * ph + i) * qh + j
                for t in range(r):
                    for u in range(kh):
                        for v in range(kw):
                            base = ((t * kh + u) * kw + v) * C
                            for c in range(C):
                                gx[n, t, i + u, j + v, c] += gcols[row, base + c]
