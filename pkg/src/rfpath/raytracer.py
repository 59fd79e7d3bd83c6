"""Multipath resolution per transmitter/receiver pair.

Mechanisms:

* direct (line of sight) with free-space amplitude lambda/(4*pi*d),
* specular reflections up to a configurable depth via the exact image
  method over planar facets,
* first-order diffraction around vertical building edges using the
  single knife-edge approximation on the Fermat point, gated to receivers
  whose direct path is blocked,
* optional single-bounce Lambertian (effective-roughness) scattering from
  facet centroids.

Amplitudes are dimensionless field ratios: |gain|^2 is the received over
transmitted power ratio under unit-gain isotropic antennas. Phase follows
exp(-j*k*L) with k = 2*pi/lambda, wrapped to (-pi, pi].

All tracing is batch-first; the single-receiver entry points run a batch of
one, so per-receiver values never depend on how receivers are grouped.
"""

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .config import TraceConfig
from .constants import SPEED_OF_LIGHT_M_S
from .geometry import Bvh, occluded, occluded_many
from .scene import (
    DEFAULT_MATERIALS,
    KIND_WALL,
    MaterialParams,
    Scene,
    TriangleMesh,
)

# Reflection points must sit at least this far (meters) inside their facet;
# edge-grazing bounces are degenerate and belong to the diffraction model.
FACET_INTERIOR_MARGIN_M = 1e-9
# Golden-section tolerance for the diffraction point search along an edge.
EDGE_SEARCH_TOL_M = 1e-6
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class PathType(IntEnum):
    LOS = 0
    REFLECTION = 1
    DIFFRACTION = 2
    SCATTERING = 3

    @property
    def label(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class AngleSpec:
    """Azimuth in [-180, 180) degrees, elevation as zenith angle in [0, 180]."""

    azimuth_deg: float
    elevation_deg: float


@dataclass(frozen=True, eq=False)
class PropagationPath:
    path_type: PathType
    order: int  # number of interactions, 0 for the direct path
    vertices: np.ndarray  # (order + 2, 3): TX, interactions, RX
    length_m: float
    gain: complex
    toa_s: float
    aod: AngleSpec
    aoa: AngleSpec
    facet_ids: tuple[int, ...] = ()


def wrap_phase(phi):
    """Wrap radians into (-pi, pi]."""
    w = np.remainder(phi, 2.0 * np.pi)
    return np.where(w > np.pi, w - 2.0 * np.pi, w)


def direction_to_angles(d) -> AngleSpec:
    """Convert a unit direction to azimuth/elevation, +180 canonicalized to -180."""
    az, el = _angles_arrays(np.asarray(d, dtype=float)[None, :])
    return AngleSpec(float(az[0]), float(el[0]))


def _angles_arrays(dirs):
    az = np.degrees(np.arctan2(dirs[:, 1], dirs[:, 0]))
    az = np.where(az >= 180.0, az - 360.0, az)
    az = np.where(az == 0.0, 0.0, az)  # normalize -0.0
    el = np.degrees(np.arccos(np.clip(dirs[:, 2], -1.0, 1.0)))
    return az, el


def fresnel_coefficients(theta_i_rad, eps):
    """Field reflection coefficients (gamma_te, gamma_tm) at a dielectric interface.

    ``eps`` is the complex relative permittivity with Im(eps) <= 0. With
    s = sqrt(eps - sin^2(theta)) on the principal branch:

        gamma_te = (cos(theta) - s) / (cos(theta) + s)
        gamma_tm = (eps*cos(theta) - s) / (eps*cos(theta) + s)

    Both magnitudes are <= 1 for passive media.
    """
    theta = np.asarray(theta_i_rad, dtype=float)
    eps = np.asarray(eps, dtype=complex)
    cos_t = np.cos(theta)
    s = np.sqrt(eps - np.sin(theta) ** 2)
    gamma_te = (cos_t - s) / (cos_t + s)
    gamma_tm = (eps * cos_t - s) / (eps * cos_t + s)
    return gamma_te, gamma_tm


def knife_edge_loss_db(nu):
    """Single knife-edge diffraction loss J(nu) in dB.

    J(nu) = 6.9 + 20*log10(sqrt((nu - 0.1)^2 + 1) + nu - 0.1) for nu > -0.78,
    zero below (no obstruction loss). J(0) is about 6.03 dB.
    """
    nu = np.asarray(nu, dtype=float)
    arg = np.sqrt((nu - 0.1) ** 2 + 1.0) + nu - 0.1
    loss = 6.9 + 20.0 * np.log10(np.maximum(arg, np.finfo(float).tiny))
    return np.where(nu > -0.78, loss, 0.0)


def _resolve_materials(scene_materials, overrides):
    table = dict(DEFAULT_MATERIALS)
    table.update(scene_materials)
    for name, params in overrides.items():
        table[name] = MaterialParams(
            name=name,
            eps_r=params.eps_r,
            conductivity_s_per_m=params.conductivity_s_per_m,
            scattering_coeff=params.scattering_coeff,
        )
    return table


def _unit_rows(v):
    norm = np.sqrt(v[..., 0] ** 2 + v[..., 1] ** 2 + v[..., 2] ** 2)
    return v / norm[..., None], norm


class _FacetSet:
    """Numpy view of the mesh facets plus admissibility precomputations."""

    def __init__(self, mesh: TriangleMesh, materials, frequency_hz, tx):
        facets = mesh.facets
        self.count = len(facets)
        self.normal = np.array([f.normal for f in facets]).reshape(self.count, 3)
        self.origin = np.array([f.vertices[0] for f in facets]).reshape(self.count, 3)
        self.is_wall = np.array([f.kind == KIND_WALL for f in facets], dtype=bool)
        self.eps = np.array(
            [materials[f.material].complex_permittivity(frequency_hz) for f in facets]
        )

        # local 2D frames and projected polygons for interior tests
        self.frame_u = np.empty((self.count, 3))
        self.frame_v = np.empty((self.count, 3))
        self.poly2d = []
        self.area = np.empty(self.count)
        self.centroid = np.empty((self.count, 3))
        for i, f in enumerate(facets):
            n = f.normal
            ref = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
            u = np.cross(ref, n)
            u /= np.linalg.norm(u)
            v = np.cross(n, u)
            self.frame_u[i] = u
            self.frame_v[i] = v
            rel = f.vertices - f.vertices[0]
            self.poly2d.append(np.stack([rel @ u, rel @ v], axis=1))
            area, centroid = _polygon_area_centroid(f.vertices)
            self.area[i] = area
            self.centroid[i] = centroid

        tx = np.asarray(tx, dtype=float)
        # signed height of every facet vertex above every other facet's plane
        front_max = np.full((self.count, self.count), -np.inf)
        for i in range(self.count):
            n = self.normal[i]
            o = self.origin[i]
            for j in range(self.count):
                d = (facets[j].vertices - o) @ n
                front_max[i, j] = d.max()
        # facing[i, j]: a bounce i -> j is geometrically possible
        self.facing = (front_max > 0.0) & (front_max.T > 0.0)
        self.tx_height = np.einsum("ij,ij->i", tx[None, :] - self.origin, self.normal)

    def contains(self, fid: int, points: np.ndarray) -> np.ndarray:
        """Strict interior test (margin FACET_INTERIOR_MARGIN_M) for points on the plane."""
        rel = points - self.origin[fid]
        px = rel @ self.frame_u[fid]
        py = rel @ self.frame_v[fid]
        poly = self.poly2d[fid]
        inside = np.zeros(len(points), dtype=bool)
        min_edge_d = np.full(len(points), np.inf)
        m = len(poly)
        for k in range(m):
            ax, ay = poly[k]
            bx, by = poly[(k + 1) % m]
            straddles = (ay > py) != (by > py)
            if by != ay:
                x_cross = ax + (py - ay) * (bx - ax) / (by - ay)
                inside ^= straddles & (px < x_cross)
            ex, ey = bx - ax, by - ay
            elen2 = ex * ex + ey * ey
            tpar = np.clip(((px - ax) * ex + (py - ay) * ey) / elen2, 0.0, 1.0)
            dx = px - (ax + tpar * ex)
            dy = py - (ay + tpar * ey)
            min_edge_d = np.minimum(min_edge_d, np.sqrt(dx * dx + dy * dy))
        return inside & (min_edge_d > FACET_INTERIOR_MARGIN_M)


def _polygon_area_centroid(verts3d):
    """Area and area centroid of a planar 3D polygon via a signed fan from v0."""
    v0 = verts3d[0]
    crosses = [
        np.cross(verts3d[i] - v0, verts3d[i + 1] - v0)
        for i in range(1, len(verts3d) - 1)
    ]
    total = np.sum(crosses, axis=0) if crosses else np.zeros(3)
    norm = np.linalg.norm(total)
    if norm == 0.0:
        return 0.0, v0.copy()
    n_hat = total / norm
    weighted = np.zeros(3)
    for i, cr in enumerate(crosses, start=1):
        w = 0.5 * (cr @ n_hat)  # signed, so concave fans cancel correctly
        weighted += w * (v0 + verts3d[i] + verts3d[i + 1]) / 3.0
    area = 0.5 * norm
    return area, weighted / area


class PathTracer:
    """Resolves the multipath set for receivers against one fixed transmitter."""

    def __init__(self, scene: Scene, mesh: TriangleMesh, bvh: Bvh, cfg: TraceConfig,
                 tx=None):
        self.scene = scene
        self.mesh = mesh
        self.bvh = bvh
        self.cfg = cfg
        self.tx = np.asarray(tx if tx is not None else cfg.tx_position, dtype=float)
        self.wavelength_m = cfg.wavelength_m
        materials = _resolve_materials(scene.materials, cfg.materials)
        self.facets = _FacetSet(mesh, materials, cfg.carrier_frequency_hz, self.tx)
        self._seq_cache: dict[int, list] = {}
        # vertical edge per footprint vertex: (x, y, top)
        edges = [
            (x, y, b.height_m)
            for b in scene.buildings
            for x, y in b.footprint
        ]
        self.edges = np.asarray(edges, dtype=float).reshape(len(edges), 3)

    # -- specular image sequences ------------------------------------------

    def _sequences(self, depth: int):
        """All admissible facet chains up to ``depth`` with their TX images.

        Pruning drops only chains that can never yield a valid bounce: the
        running image must be strictly in front of the next facet plane, and
        consecutive facets must mutually face each other.
        """
        if depth in self._seq_cache:
            return self._seq_cache[depth]
        fac = self.facets
        seqs = []

        def extend(chain, image):
            k = len(chain)
            if k > 0:
                seqs.append((tuple(chain), np.array(images_stack)))
            if k == depth:
                return
            last = chain[-1] if chain else None
            for g in range(fac.count):
                if last is None:
                    h = fac.tx_height[g]
                else:
                    if not fac.facing[last, g]:
                        continue
                    h = float((image - fac.origin[g]) @ fac.normal[g])
                if h <= 0.0:
                    continue
                src = image if chain else self.tx
                img2 = src - 2.0 * h * fac.normal[g]
                chain.append(g)
                images_stack.append(img2)
                extend(chain, img2)
                chain.pop()
                images_stack.pop()

        images_stack: list[np.ndarray] = []
        extend([], self.tx)
        self._seq_cache[depth] = seqs
        return seqs

    # -- mechanisms ---------------------------------------------------------

    def _los_batch(self, rx):
        occ = occluded_many(self.bvh, self.tx[None, :], rx)
        paths: list[PropagationPath | None] = [None] * len(rx)
        clear = np.nonzero(~occ)[0]
        if clear.size:
            sel = rx[clear]
            d = sel - self.tx
            dist = np.sqrt((d ** 2).sum(axis=1))
            ok = dist > 0.0
            mag = self.wavelength_m / (4.0 * np.pi * dist[ok])
            phase = wrap_phase(-2.0 * np.pi * dist[ok] / self.wavelength_m)
            gain = mag * np.exp(1j * phase)
            dirs = d[ok] / dist[ok][:, None]
            az_d, el_d = _angles_arrays(dirs)
            az_a, el_a = _angles_arrays(-dirs)
            for row, i in enumerate(clear[ok]):
                paths[i] = PropagationPath(
                    path_type=PathType.LOS,
                    order=0,
                    vertices=np.vstack([self.tx, rx[i]]),
                    length_m=float(dist[ok][row]),
                    gain=complex(gain[row]),
                    toa_s=float(dist[ok][row] / SPEED_OF_LIGHT_M_S),
                    aod=AngleSpec(float(az_d[row]), float(el_d[row])),
                    aoa=AngleSpec(float(az_a[row]), float(el_a[row])),
                )
        return paths, occ

    def _reflections_batch(self, rx, depth):
        out: list[list[PropagationPath]] = [[] for _ in range(len(rx))]
        if depth < 1 or self.facets.count == 0 or len(rx) == 0:
            return out
        fac = self.facets
        rx_lo = rx.min(axis=0)
        rx_hi = rx.max(axis=0)
        corners = np.array(
            [[rx_lo[0], rx_lo[1], rx_lo[2]], [rx_hi[0], rx_lo[1], rx_lo[2]],
             [rx_lo[0], rx_hi[1], rx_lo[2]], [rx_hi[0], rx_hi[1], rx_lo[2]],
             [rx_lo[0], rx_lo[1], rx_hi[2]], [rx_hi[0], rx_lo[1], rx_hi[2]],
             [rx_lo[0], rx_hi[1], rx_hi[2]], [rx_hi[0], rx_hi[1], rx_hi[2]]]
        )
        box_front = np.array(
            [((corners - fac.origin[g]) @ fac.normal[g]).max() > 0.0
             for g in range(fac.count)]
        )

        candidates = []  # (chain, idx, pts) with pts ordered TX side first
        for chain, images in self._sequences(depth):
            if not box_front[chain[-1]]:
                continue
            k = len(chain)
            idx = np.arange(len(rx))
            x = rx
            pts_rev = []
            dead = False
            for step in range(k - 1, -1, -1):
                g = chain[step]
                n = fac.normal[g]
                o = fac.origin[g]
                image = images[step]
                hx = (x - o) @ n
                denom = (x - image) @ n
                with np.errstate(divide="ignore", invalid="ignore"):
                    s = hx / denom
                good = (hx > 0.0) & (denom > 0.0) & (s > 0.0) & (s < 1.0)
                if not good.any():
                    dead = True
                    break
                p = x[good] + s[good, None] * (image - x[good])
                inside = fac.contains(g, p)
                if not inside.any():
                    dead = True
                    break
                keep = np.nonzero(good)[0][inside]
                idx = idx[keep]
                x = p[inside]
                pts_rev = [arr[keep] for arr in pts_rev]
                pts_rev.append(x)
            if dead:
                continue
            pts = np.stack(pts_rev[::-1], axis=1)  # (m, k, 3)
            candidates.append((chain, idx, pts))

        if not candidates:
            return out

        # one occlusion pass over every segment of every candidate
        seg_p, seg_q, owner_len = [], [], []
        for chain, idx, pts in candidates:
            m, k, _ = pts.shape
            chain_pts = np.concatenate(
                [np.broadcast_to(self.tx, (m, 1, 3)), pts, rx[idx][:, None, :]], axis=1
            )
            seg_p.append(chain_pts[:, :-1, :].reshape(-1, 3))
            seg_q.append(chain_pts[:, 1:, :].reshape(-1, 3))
            owner_len.append((m, k + 1))
        occ = occluded_many(self.bvh, np.concatenate(seg_p), np.concatenate(seg_q))

        cursor = 0
        for (chain, idx, pts), (m, nseg) in zip(candidates, owner_len):
            blocked = occ[cursor:cursor + m * nseg].reshape(m, nseg).any(axis=1)
            cursor += m * nseg
            if blocked.all():
                continue
            sel = ~blocked
            idx = idx[sel]
            pts = pts[sel]
            self._emit_reflections(out, chain, idx, pts, rx)
        return out

    def _emit_reflections(self, out, chain, idx, pts, rx):
        fac = self.facets
        k = len(chain)
        m = len(idx)
        verts = np.concatenate(
            [np.broadcast_to(self.tx, (m, 1, 3)), pts, rx[idx][:, None, :]], axis=1
        )
        seg = verts[:, 1:, :] - verts[:, :-1, :]
        dirs, seg_len = _unit_rows(seg)
        length = seg_len.sum(axis=1)
        coeff = np.ones(m, dtype=complex)
        for b, g in enumerate(chain):
            cos_t = np.clip(-(dirs[:, b, :] @ fac.normal[g]), 0.0, 1.0)
            theta = np.arccos(cos_t)
            gte, gtm = fresnel_coefficients(theta, fac.eps[g])
            coeff = coeff * (gte if fac.is_wall[g] else gtm)
        mag = self.wavelength_m / (4.0 * np.pi * length)
        phase = wrap_phase(-2.0 * np.pi * length / self.wavelength_m)
        gain = mag * np.exp(1j * phase) * coeff
        az_d, el_d = _angles_arrays(dirs[:, 0, :])
        az_a, el_a = _angles_arrays(-dirs[:, -1, :])
        toa = length / SPEED_OF_LIGHT_M_S
        for row in range(m):
            out[idx[row]].append(
                PropagationPath(
                    path_type=PathType.REFLECTION,
                    order=k,
                    vertices=verts[row],
                    length_m=float(length[row]),
                    gain=complex(gain[row]),
                    toa_s=float(toa[row]),
                    aod=AngleSpec(float(az_d[row]), float(el_d[row])),
                    aoa=AngleSpec(float(az_a[row]), float(el_a[row])),
                    facet_ids=chain,
                )
            )

    def _diffraction_batch(self, rx, rx_rows):
        """Knife-edge paths for receivers whose direct path is blocked."""
        out: list[list[PropagationPath]] = [[] for _ in range(len(rx_rows))]
        n_edges = len(self.edges)
        if n_edges == 0 or len(rx_rows) == 0:
            return out
        tx = self.tx
        lam = self.wavelength_m
        chunk = max(1, 200_000 // n_edges)
        for start in range(0, len(rx_rows), chunk):
            rows = rx_rows[start:start + chunk]
            pts = rx[rows]
            mc = len(pts)
            ex = np.broadcast_to(self.edges[:, 0], (mc, n_edges))
            ey = np.broadcast_to(self.edges[:, 1], (mc, n_edges))
            etop = np.broadcast_to(self.edges[:, 2], (mc, n_edges))
            ht2 = (tx[0] - self.edges[:, 0]) ** 2 + (tx[1] - self.edges[:, 1]) ** 2
            ht2 = np.broadcast_to(ht2, (mc, n_edges))
            hr2 = (pts[:, 0:1] - ex) ** 2 + (pts[:, 1:2] - ey) ** 2
            rz = np.broadcast_to(pts[:, 2:3], (mc, n_edges))

            z_star = _golden_min_z(ht2, hr2, tx[2], rz, np.zeros_like(etop), etop)
            d1 = np.sqrt(ht2 + (tx[2] - z_star) ** 2)
            d2 = np.sqrt(hr2 + (rz - z_star) ** 2)
            finite = (d1 > 0.0) & (d2 > 0.0)

            d_pts = np.stack([ex, ey, z_star], axis=-1).reshape(-1, 3)
            rx_rep = np.repeat(pts, n_edges, axis=0)
            occ1 = occluded_many(self.bvh, np.broadcast_to(tx, d_pts.shape), d_pts)
            occ2 = occluded_many(self.bvh, d_pts, rx_rep)
            clear = finite & ~(occ1 | occ2).reshape(mc, n_edges)
            if not clear.any():
                continue

            u = pts - tx  # (mc, 3)
            u_len = np.sqrt((u ** 2).sum(axis=1))
            w = d_pts.reshape(mc, n_edges, 3) - tx
            cr = np.cross(w, u[:, None, :])
            h_perp = np.sqrt((cr ** 2).sum(axis=-1)) / u_len[:, None]
            length = d1 + d2
            with np.errstate(divide="ignore", invalid="ignore"):
                nu = h_perp * np.sqrt(2.0 * length / (lam * d1 * d2))
            loss_db = knife_edge_loss_db(nu)
            mag = lam / (4.0 * np.pi * length) * 10.0 ** (-loss_db / 20.0)
            phase = wrap_phase(-2.0 * np.pi * length / lam)

            for r, e in zip(*np.nonzero(clear)):
                d_point = d_pts.reshape(mc, n_edges, 3)[r, e]
                dir_out = d_point - tx
                dir_in = pts[r] - d_point
                out[start + r].append(
                    PropagationPath(
                        path_type=PathType.DIFFRACTION,
                        order=1,
                        vertices=np.vstack([tx, d_point, pts[r]]),
                        length_m=float(length[r, e]),
                        gain=complex(mag[r, e] * np.exp(1j * phase[r, e])),
                        toa_s=float(length[r, e] / SPEED_OF_LIGHT_M_S),
                        aod=direction_to_angles(dir_out / np.linalg.norm(dir_out)),
                        aoa=direction_to_angles(-dir_in / np.linalg.norm(dir_in)),
                    )
                )
        return out

    def _scattering_batch(self, rx, s_coeff):
        out: list[list[PropagationPath]] = [[] for _ in range(len(rx))]
        if s_coeff <= 0.0 or self.facets.count == 0 or len(rx) == 0:
            return out
        fac = self.facets
        lam = self.wavelength_m
        tx = self.tx
        for g in range(fac.count):
            n = fac.normal[g]
            c = fac.centroid[g]
            v_tx = tx - c
            d1 = float(np.linalg.norm(v_tx))
            cos_i = float(v_tx @ n) / d1 if d1 > 0.0 else 0.0
            if cos_i <= 0.0:
                continue
            v_rx = rx - c
            d2 = np.sqrt((v_rx ** 2).sum(axis=1))
            with np.errstate(divide="ignore", invalid="ignore"):
                cos_s = (v_rx @ n) / d2
            cand = np.nonzero((cos_s > 0.0) & (d2 > 0.0))[0]
            if cand.size == 0:
                continue
            occ1 = occluded(self.bvh, tx, c)
            if occ1:
                continue
            occ2 = occluded_many(self.bvh, c[None, :], rx[cand])
            cand = cand[~occ2]
            if cand.size == 0:
                continue
            amp = (
                s_coeff
                * (lam / (4.0 * np.pi))
                * np.sqrt(fac.area[g] * cos_i * cos_s[cand] / np.pi)
                / (d1 * d2[cand])
            )
            length = d1 + d2[cand]
            phase = wrap_phase(-2.0 * np.pi * length / lam)
            dir_out = v_tx / d1
            aod = direction_to_angles(-dir_out)
            for row, i in enumerate(cand):
                if amp[row] <= 0.0:
                    continue
                aoa_dir = (c - rx[i]) / d2[i]  # back toward the scatter point
                out[i].append(
                    PropagationPath(
                        path_type=PathType.SCATTERING,
                        order=1,
                        vertices=np.vstack([tx, c, rx[i]]),
                        length_m=float(length[row]),
                        gain=complex(amp[row] * np.exp(1j * phase[row])),
                        toa_s=float(length[row] / SPEED_OF_LIGHT_M_S),
                        aod=aod,
                        aoa=direction_to_angles(aoa_dir),
                        facet_ids=(g,),
                    )
                )
        return out

    # -- assembly -----------------------------------------------------------

    def trace_batch(self, rx, depth=None) -> list[list[PropagationPath]]:
        """Top-N path lists for a batch of outdoor receiver positions."""
        rx = np.atleast_2d(np.asarray(rx, dtype=float))
        depth = self.cfg.max_reflection_depth if depth is None else depth
        los, blocked = self._los_batch(rx)
        merged: list[list[PropagationPath]] = [
            [p] if p is not None else [] for p in los
        ]
        for i, paths in enumerate(self._reflections_batch(rx, depth)):
            merged[i].extend(paths)
        if self.cfg.enable_diffraction:
            rows = np.nonzero(blocked)[0]
            for local, paths in enumerate(self._diffraction_batch(rx, rows)):
                merged[rows[local]].extend(paths)
        if self.cfg.enable_scattering:
            for i, paths in enumerate(
                self._scattering_batch(rx, self.cfg.scattering_coefficient_default)
            ):
                merged[i].extend(paths)
        n = self.cfg.n_paths_retained
        for i, paths in enumerate(merged):
            paths.sort(key=lambda p: (-abs(p.gain), p.toa_s, int(p.path_type)))
            merged[i] = paths[:n]
        return merged

    def trace(self, rx) -> list[PropagationPath]:
        return self.trace_batch(np.asarray(rx, dtype=float)[None, :])[0]


def _golden_min_z(ht2, hr2, tz, rz, lo, hi):
    """Vectorized golden-section minimizer of |TX-D| + |D-RX| over edge height z."""
    span = float(np.max(hi - lo, initial=0.0))
    if span <= 0.0:
        return lo.copy()
    iters = max(1, math.ceil(math.log(EDGE_SEARCH_TOL_M / span) / math.log(_INVPHI)))

    def f(z):
        return np.sqrt(ht2 + (tz - z) ** 2) + np.sqrt(hr2 + (rz - z) ** 2)

    a = lo.astype(float).copy()
    b = hi.astype(float).copy()
    x1 = b - _INVPHI * (b - a)
    x2 = a + _INVPHI * (b - a)
    f1 = f(x1)
    f2 = f(x2)
    for _ in range(iters):
        take_left = f1 < f2
        b = np.where(take_left, x2, b)
        a = np.where(take_left, a, x1)
        x1 = b - _INVPHI * (b - a)
        x2 = a + _INVPHI * (b - a)
        f1 = f(x1)
        f2 = f(x2)
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# single-pair entry points


def trace_los(bvh: Bvh, tx, rx, wavelength_m: float) -> PropagationPath | None:
    """Direct path when unobstructed, else None."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if occluded(bvh, tx, rx):
        return None
    d = rx - tx
    dist = float(np.linalg.norm(d))
    mag = wavelength_m / (4.0 * np.pi * dist)
    phase = float(wrap_phase(-2.0 * np.pi * dist / wavelength_m))
    direction = d / dist
    return PropagationPath(
        path_type=PathType.LOS,
        order=0,
        vertices=np.vstack([tx, rx]),
        length_m=dist,
        gain=mag * complex(math.cos(phase), math.sin(phase)),
        toa_s=dist / SPEED_OF_LIGHT_M_S,
        aod=direction_to_angles(direction),
        aoa=direction_to_angles(-direction),
    )


def _context_for(mesh, bvh, tx, frequency_hz, materials=None, scene=None):
    scene = scene or Scene(buildings=(), materials=dict(DEFAULT_MATERIALS))
    cfg = TraceConfig(carrier_frequency_hz=frequency_hz, materials=dict(materials or {}))
    return PathTracer(scene, mesh, bvh, cfg, tx=tx)


def enumerate_reflections(bvh: Bvh, mesh: TriangleMesh, tx, rx, depth: int,
                          frequency_hz: float = 3.5e9,
                          materials: dict[str, MaterialParams] | None = None,
                          scene: Scene | None = None) -> list[PropagationPath]:
    """Exact image-method specular paths up to ``depth`` bounces."""
    if depth < 1:
        return []
    tracer = _context_for(mesh, bvh, np.asarray(tx, float), frequency_hz, materials, scene)
    return tracer._reflections_batch(np.asarray(rx, float)[None, :], depth)[0]


def trace_diffraction(bvh: Bvh, scene: Scene, tx, rx,
                      wavelength_m: float) -> list[PropagationPath]:
    """Vertical-edge knife-edge paths; empty when the direct path exists."""
    tx = np.asarray(tx, dtype=float)
    rx = np.asarray(rx, dtype=float)
    if not occluded(bvh, tx, rx):
        return []
    from .scene import triangulate  # local import to avoid rebuild cost at module load

    mesh = triangulate(scene)
    cfg = TraceConfig(carrier_frequency_hz=SPEED_OF_LIGHT_M_S / wavelength_m)
    tracer = PathTracer(scene, mesh, bvh, cfg, tx=tx)
    return tracer._diffraction_batch(rx[None, :], np.array([0]))[0]


def trace_scattering(bvh: Bvh, mesh: TriangleMesh, tx, rx, wavelength_m: float,
                     scattering_coeff: float,
                     scene: Scene | None = None) -> list[PropagationPath]:
    """Single-bounce Lambertian scattering from facet centroids."""
    if scattering_coeff <= 0.0:
        return []
    tracer = _context_for(mesh, bvh, np.asarray(tx, float),
                          SPEED_OF_LIGHT_M_S / wavelength_m, scene=scene)
    return tracer._scattering_batch(np.asarray(rx, float)[None, :], scattering_coeff)[0]


def trace_receiver(bvh: Bvh, mesh: TriangleMesh, scene: Scene, tx, rx,
                   cfg: TraceConfig) -> list[PropagationPath]:
    """All enabled mechanisms, strongest first, truncated to cfg.n_paths_retained."""
    tracer = PathTracer(scene, mesh, bvh, cfg, tx=tx)
    return tracer.trace(rx)
