"""Fast marching on triangle meshes (intrinsic edge lengths).

The update inside a triangle reconstructs a virtual point source from the two
known arrival times and unfolds the triangle into the plane, which makes the
scheme exact for a point source on a flat triangulation.  When the virtual
source is not visible through the opposite edge, the update falls back to the
two edge paths.
"""

import heapq

import numpy as np
from numba import njit


@njit(cache=True)
def _face_update(ta, tb, lab, lac, lbc):
    # place a at the origin and b on the positive x axis, c above
    best = min(ta + lac, tb + lbc)
    if lab <= 0.0:
        return best
    cx = (lac * lac - lbc * lbc + lab * lab) / (2.0 * lab)
    cy2 = lac * lac - cx * cx
    if cy2 <= 0.0:
        return best
    cy = np.sqrt(cy2)
    sx = (ta * ta - tb * tb + lab * lab) / (2.0 * lab)
    sy2 = ta * ta - sx * sx
    if sy2 < 0.0:
        return best
    sy = -np.sqrt(sy2)
    # the ray from the virtual source to c must cross the segment ab
    denom = cy - sy
    if denom <= 0.0:
        return best
    xcross = sx + (cx - sx) * (-sy) / denom
    if xcross < 0.0 or xcross > lab:
        return best
    tc = np.sqrt((cx - sx) ** 2 + (cy - sy) ** 2)
    return min(best, tc)


@njit(cache=True)
def fast_marching(source, faces, face_len, vf_ptr, vf_idx, nverts, limit=np.inf):
    """Arrival times of a unit-speed front started at ``source``.

    Marching stops once the front passes ``limit``; later vertices get ``inf``.

    ``face_len[f, i]`` is the length of the edge opposite local vertex ``i``.
    ``vf_ptr``/``vf_idx`` is a CSR vertex-to-face incidence.
    """
    inf = np.inf
    dist = np.full(nverts, inf)
    state = np.zeros(nverts, dtype=np.int8)  # 0 far, 1 trial, 2 accepted
    dist[source] = 0.0
    heap = [(0.0, source)]
    state[source] = 1
    while len(heap) > 0:
        d, v = heapq.heappop(heap)
        if state[v] == 2 or d > dist[v]:
            continue
        if d > limit:
            break
        state[v] = 2
        for k in range(vf_ptr[v], vf_ptr[v + 1]):
            f = vf_idx[k]
            # local index of v inside the face
            iv = 0
            for i in range(3):
                if faces[f, i] == v:
                    iv = i
            i1 = (iv + 1) % 3
            i2 = (iv + 2) % 3
            p = faces[f, i1]
            q = faces[f, i2]
            l_vp = face_len[f, i2]
            l_vq = face_len[f, i1]
            l_pq = face_len[f, iv]
            for side in range(2):
                if side == 0:
                    tgt, other, l_vt, l_vo, l_ot = p, q, l_vp, l_vq, l_pq
                else:
                    tgt, other, l_vt, l_vo, l_ot = q, p, l_vq, l_vp, l_pq
                if state[tgt] == 2:
                    continue
                cand = dist[v] + l_vt
                if state[other] == 2:
                    # a = v, b = other, c = tgt
                    cand = min(cand, _face_update(dist[v], dist[other], l_vo, l_vt, l_ot))
                if cand < dist[tgt]:
                    dist[tgt] = cand
                    state[tgt] = 1
                    heapq.heappush(heap, (cand, tgt))
    for i in range(nverts):
        if state[i] != 2:
            dist[i] = inf
    return dist


def vertex_face_csr(faces, nverts):
    counts = np.bincount(faces.ravel(), minlength=nverts)
    ptr = np.zeros(nverts + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    order = np.argsort(faces.ravel(), kind="stable")
    idx = (order // 3).astype(np.int64)
    return ptr, idx
