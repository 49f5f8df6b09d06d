"""Numba micro-kernels for the packed uint8 GEMM.

The packed layout is (panels, k_blocks, panel_height, k_block), C order,
zero padded, so each row's segment within a k-block is contiguous. Kernels
walk 4-row register tiles inside a panel and keep one int32 accumulator
chain per (row, column); the accumulators are named scalars so LLVM keeps
them in vector registers. The hot loop is a raw u8 * i32 dot product:
zero-point corrections happen outside via precomputed row sums.

All kernels are single-threaded. int32 overflow semantics match a plain
32-bit accumulator (wraparound); callers guarantee k * 255^2 < 2^31.
"""

import numpy as np
from numba import int32, njit

_SIG_BASE = "void(uint8[:,:,:,::1], int32[::1], {b}, int32, {c}, int32[:,::1])"


def _sig(cols):
    b = ", ".join(["int32[::1]"] * cols)
    c = ", ".join(["int32"] * cols)
    return _SIG_BASE.format(b=b, c=c)


@njit(_sig(1), cache=True)
def dot_n1(panels, rowsum, b0c, b0, corr0, out):
    npan, nblk, ph, kb = panels.shape
    tiles = ph - (ph % 4)
    for p in range(npan):
        base = p * ph
        for t in range(0, tiles, 4):
            a0 = int32(0); a1 = int32(0); a2 = int32(0); a3 = int32(0)
            for c in range(nblk):
                s0 = panels[p, c, t + 0]
                s1 = panels[p, c, t + 1]
                s2 = panels[p, c, t + 2]
                s3 = panels[p, c, t + 3]
                bs = b0c[c * kb:(c + 1) * kb]
                for kk in range(kb):
                    bv = bs[kk]
                    a0 += int32(s0[kk]) * bv
                    a1 += int32(s1[kk]) * bv
                    a2 += int32(s2[kk]) * bv
                    a3 += int32(s3[kk]) * bv
            out[base + t + 0, 0] = a0 - b0 * rowsum[base + t + 0] + corr0
            out[base + t + 1, 0] = a1 - b0 * rowsum[base + t + 1] + corr0
            out[base + t + 2, 0] = a2 - b0 * rowsum[base + t + 2] + corr0
            out[base + t + 3, 0] = a3 - b0 * rowsum[base + t + 3] + corr0
        for t in range(tiles, ph):
            acc = int32(0)
            for c in range(nblk):
                seg = panels[p, c, t]
                bs = b0c[c * kb:(c + 1) * kb]
                for kk in range(kb):
                    acc += int32(seg[kk]) * bs[kk]
            out[base + t, 0] = acc - b0 * rowsum[base + t] + corr0


@njit(_sig(2), cache=True)
def dot_n2(panels, rowsum, b0c, b1c, b0, corr0, corr1, out):
    npan, nblk, ph, kb = panels.shape
    tiles = ph - (ph % 4)
    for p in range(npan):
        base = p * ph
        for t in range(0, tiles, 4):
            a00 = int32(0); a01 = int32(0)
            a10 = int32(0); a11 = int32(0)
            a20 = int32(0); a21 = int32(0)
            a30 = int32(0); a31 = int32(0)
            for c in range(nblk):
                s0 = panels[p, c, t + 0]
                s1 = panels[p, c, t + 1]
                s2 = panels[p, c, t + 2]
                s3 = panels[p, c, t + 3]
                u = b0c[c * kb:(c + 1) * kb]
                v = b1c[c * kb:(c + 1) * kb]
                for kk in range(kb):
                    bu = u[kk]
                    bv = v[kk]
                    e0 = int32(s0[kk]); e1 = int32(s1[kk])
                    e2 = int32(s2[kk]); e3 = int32(s3[kk])
                    a00 += e0 * bu; a01 += e0 * bv
                    a10 += e1 * bu; a11 += e1 * bv
                    a20 += e2 * bu; a21 += e2 * bv
                    a30 += e3 * bu; a31 += e3 * bv
            r0 = b0 * rowsum[base + t + 0]
            r1 = b0 * rowsum[base + t + 1]
            r2 = b0 * rowsum[base + t + 2]
            r3 = b0 * rowsum[base + t + 3]
            out[base + t + 0, 0] = a00 - r0 + corr0
            out[base + t + 0, 1] = a01 - r0 + corr1
            out[base + t + 1, 0] = a10 - r1 + corr0
            out[base + t + 1, 1] = a11 - r1 + corr1
            out[base + t + 2, 0] = a20 - r2 + corr0
            out[base + t + 2, 1] = a21 - r2 + corr1
            out[base + t + 3, 0] = a30 - r3 + corr0
            out[base + t + 3, 1] = a31 - r3 + corr1
        for t in range(tiles, ph):
            acc0 = int32(0); acc1 = int32(0)
            for c in range(nblk):
                seg = panels[p, c, t]
                u = b0c[c * kb:(c + 1) * kb]
                v = b1c[c * kb:(c + 1) * kb]
                for kk in range(kb):
                    e = int32(seg[kk])
                    acc0 += e * u[kk]
                    acc1 += e * v[kk]
            r = b0 * rowsum[base + t]
            out[base + t, 0] = acc0 - r + corr0
            out[base + t, 1] = acc1 - r + corr1


@njit(_sig(3), cache=True)
def dot_n3(panels, rowsum, b0c, b1c, b2c, b0, corr0, corr1, corr2, out):
    npan, nblk, ph, kb = panels.shape
    tiles = ph - (ph % 4)
    for p in range(npan):
        base = p * ph
        for t in range(0, tiles, 4):
            a00 = int32(0); a01 = int32(0); a02 = int32(0)
            a10 = int32(0); a11 = int32(0); a12 = int32(0)
            a20 = int32(0); a21 = int32(0); a22 = int32(0)
            a30 = int32(0); a31 = int32(0); a32 = int32(0)
            for c in range(nblk):
                s0 = panels[p, c, t + 0]
                s1 = panels[p, c, t + 1]
                s2 = panels[p, c, t + 2]
                s3 = panels[p, c, t + 3]
                u = b0c[c * kb:(c + 1) * kb]
                v = b1c[c * kb:(c + 1) * kb]
                w = b2c[c * kb:(c + 1) * kb]
                for kk in range(kb):
                    bu = u[kk]; bv = v[kk]; bw = w[kk]
                    e0 = int32(s0[kk]); e1 = int32(s1[kk])
                    e2 = int32(s2[kk]); e3 = int32(s3[kk])
                    a00 += e0 * bu; a01 += e0 * bv; a02 += e0 * bw
                    a10 += e1 * bu; a11 += e1 * bv; a12 += e1 * bw
                    a20 += e2 * bu; a21 += e2 * bv; a22 += e2 * bw
                    a30 += e3 * bu; a31 += e3 * bv; a32 += e3 * bw
            accs = ((a00, a01, a02), (a10, a11, a12), (a20, a21, a22), (a30, a31, a32))
            for r in range(4):
                rs = b0 * rowsum[base + t + r]
                out[base + t + r, 0] = accs[r][0] - rs + corr0
                out[base + t + r, 1] = accs[r][1] - rs + corr1
                out[base + t + r, 2] = accs[r][2] - rs + corr2
        for t in range(tiles, ph):
            acc0 = int32(0); acc1 = int32(0); acc2 = int32(0)
            for c in range(nblk):
                seg = panels[p, c, t]
                u = b0c[c * kb:(c + 1) * kb]
                v = b1c[c * kb:(c + 1) * kb]
                w = b2c[c * kb:(c + 1) * kb]
                for kk in range(kb):
                    e = int32(seg[kk])
                    acc0 += e * u[kk]
                    acc1 += e * v[kk]
                    acc2 += e * w[kk]
            rs = b0 * rowsum[base + t]
            out[base + t, 0] = acc0 - rs + corr0
            out[base + t, 1] = acc1 - rs + corr1
            out[base + t, 2] = acc2 - rs + corr2


@njit(_sig(4), cache=True)
def dot_n4(panels, rowsum, b0c, b1c, b2c, b3c, b0, corr0, corr1, corr2, corr3, out):
    npan, nblk, ph, kb = panels.shape
    tiles = ph - (ph % 4)
    for p in range(npan):
        base = p * ph
        for t in range(0, tiles, 4):
            a00 = int32(0); a01 = int32(0); a02 = int32(0); a03 = int32(0)
            a10 = int32(0); a11 = int32(0); a12 = int32(0); a13 = int32(0)
            a20 = int32(0); a21 = int32(0); a22 = int32(0); a23 = int32(0)
            a30 = int32(0); a31 = int32(0); a32 = int32(0); a33 = int32(0)
            for c in range(nblk):
                s0 = panels[p, c, t + 0]
                s1 = panels[p, c, t + 1]
                s2 = panels[p, c, t + 2]
                s3 = panels[p, c, t + 3]
                u = b0c[c * kb:(c + 1) * kb]
                v = b1c[c * kb:(c + 1) * kb]
                w = b2c[c * kb:(c + 1) * kb]
                x = b3c[c * kb:(c + 1) * kb]
                for kk in range(kb):
                    bu = u[kk]; bv = v[kk]; bw = w[kk]; bx = x[kk]
                    e0 = int32(s0[kk]); e1 = int32(s1[kk])
                    e2 = int32(s2[kk]); e3 = int32(s3[kk])
                    a00 += e0 * bu; a01 += e0 * bv; a02 += e0 * bw; a03 += e0 * bx
                    a10 += e1 * bu; a11 += e1 * bv; a12 += e1 * bw; a13 += e1 * bx
                    a20 += e2 * bu; a21 += e2 * bv; a22 += e2 * bw; a23 += e2 * bx
                    a30 += e3 * bu; a31 += e3 * bv; a32 += e3 * bw; a33 += e3 * bx
            accs = ((a00, a01, a02, a03), (a10, a11, a12, a13),
                    (a20, a21, a22, a23), (a30, a31, a32, a33))
            corrs = (corr0, corr1, corr2, corr3)
            for r in range(4):
                rs = b0 * rowsum[base + t + r]
                for j in range(4):
                    out[base + t + r, j] = accs[r][j] - rs + corrs[j]
        for t in range(tiles, ph):
            acc0 = int32(0); acc1 = int32(0); acc2 = int32(0); acc3 = int32(0)
            for c in range(nblk):
                seg = panels[p, c, t]
                u = b0c[c * kb:(c + 1) * kb]
                v = b1c[c * kb:(c + 1) * kb]
                w = b2c[c * kb:(c + 1) * kb]
                x = b3c[c * kb:(c + 1) * kb]
                for kk in range(kb):
                    e = int32(seg[kk])
                    acc0 += e * u[kk]
                    acc1 += e * v[kk]
                    acc2 += e * w[kk]
                    acc3 += e * x[kk]
            rs = b0 * rowsum[base + t]
            out[base + t, 0] = acc0 - rs + corr0
            out[base + t, 1] = acc1 - rs + corr1
            out[base + t, 2] = acc2 - rs + corr2
            out[base + t, 3] = acc3 - rs + corr3


KERNELS = {1: dot_n1, 2: dot_n2, 3: dot_n3, 4: dot_n4}
