"""Naive reference evaluators shared by tests (explicit loops, no numpy)."""


def naive_mixed_n2(phi, N, g, m):
    """Mixed MA density of a flat n = 2 torus form g * identity, by explicit loops.

    m = 1: (h11 g + h22 g) / 2;  m = 2: h11 h22 - mean |corner h12|^2.
    """
    h = 1.0 / N

    def at(i, j, k, l):
        return phi[i % N][j % N][k % N][l % N]

    def d2(i, j, k, l, ax):
        e = [0, 0, 0, 0]
        e[ax] = 1
        p = at(i + e[0], j + e[1], k + e[2], l + e[3])
        q = at(i - e[0], j - e[1], k - e[2], l - e[3])
        return (p + q - 2 * at(i, j, k, l)) / (h * h)

    def mixed(i, j, k, l, a, b, sa, sb):
        # forward-forward difference across axes a, b anchored at the corner (sa, sb)
        base = [i, j, k, l]
        if sa < 0:
            base[a] -= 1
        if sb < 0:
            base[b] -= 1
        ea = [0, 0, 0, 0]
        ea[a] = 1
        eb = [0, 0, 0, 0]
        eb[b] = 1
        x = base
        v11 = at(*[x[t] + ea[t] + eb[t] for t in range(4)])
        v10 = at(*[x[t] + ea[t] for t in range(4)])
        v01 = at(*[x[t] + eb[t] for t in range(4)])
        v00 = at(*x)
        return (v11 - v10 - v01 + v00) / (h * h)

    out = [[[[0.0] * N for _ in range(N)] for _ in range(N)] for _ in range(N)]
    for i in range(N):
        for j in range(N):
            for k in range(N):
                for l in range(N):
                    h11 = g + 0.5 * (d2(i, j, k, l, 0) + d2(i, j, k, l, 1))
                    h22 = g + 0.5 * (d2(i, j, k, l, 2) + d2(i, j, k, l, 3))
                    if m == 1:
                        out[i][j][k][l] = 0.5 * (h11 * g + h22 * g)
                        continue
                    sq = 0.0
                    for sa in (1, -1):
                        for sb in (1, -1):
                            P = mixed(i, j, k, l, 0, 2, sa, sb) + mixed(i, j, k, l, 1, 3, sa, sb)
                            Q = mixed(i, j, k, l, 0, 3, sa, sb) - mixed(i, j, k, l, 1, 2, sa, sb)
                            sq += 0.25 * (P * P + Q * Q)
                    out[i][j][k][l] = h11 * h22 - sq / 4.0
    return out
