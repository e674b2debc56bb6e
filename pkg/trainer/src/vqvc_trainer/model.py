"""Torch modules whose forward pass mirrors the deployed decoder layer
for layer: stride-2 conv stages with resblocks, nearest-neighbor
upsampling, windowed cross-attention over zero-padded reference windows,
and a three-stage residual VQ with two codebooks per stage.

Export produces the decoder's exact tensor names, so a trained state
dict maps onto the VQVCW1 schema without any renaming table.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import TrainConfig


def lrelu(x):
    return F.leaky_relu(x, 0.01)


class ResBlock(nn.Module):
    def __init__(self, width):
        super().__init__()
        self.a = nn.Conv2d(width, width, 3, padding=1)
        self.b = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        return x + self.b(lrelu(self.a(lrelu(x))))


class Encoder(nn.Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        widths = (*cfg.widths, cfg.n_c)
        prev = 3
        self.downs = nn.ModuleList()
        self.stages = nn.ModuleList()
        for w in widths:
            self.downs.append(nn.Conv2d(prev, w, 3, stride=2, padding=1))
            self.stages.append(nn.Sequential(
                *[ResBlock(w) for _ in range(cfg.resblocks)]))
            prev = w

    def forward(self, x):
        for down, stage in zip(self.downs, self.stages):
            x = stage(lrelu(down(x)))
        return x


class Decoder(nn.Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        w0, w1 = cfg.widths
        widths = (w1, w0, w0)
        self.stage0 = nn.Sequential(
            *[ResBlock(cfg.n_c) for _ in range(cfg.resblocks)])
        prev = cfg.n_c
        self.ups = nn.ModuleList()
        self.stages = nn.ModuleList()
        for w in widths:
            self.ups.append(nn.Conv2d(prev, w, 3, padding=1))
            self.stages.append(nn.Sequential(
                *[ResBlock(w) for _ in range(cfg.resblocks)]))
            prev = w
        self.out = nn.Conv2d(prev, 3, 3, padding=1)

    def forward(self, y, clamp=True):
        x = self.stage0(y)
        for up, stage in zip(self.ups, self.stages):
            x = x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)
            x = stage(lrelu(up(x)))
        x = self.out(x)
        return x.clamp(0.0, 1.0) if clamp else x


def partition_query(y, s):
    # [b, c, h, w] -> [b, nw, c, s, s] in raster order
    b, c, h, w = y.shape
    win = y.reshape(b, c, h // s, s, w // s, s)
    return win.permute(0, 2, 4, 1, 3, 5).reshape(b, -1, c, s, s)


def unpartition(windows, h, w):
    b, nwin, c, s, _ = windows.shape
    grid = windows.reshape(b, h // s, w // s, c, s, s)
    return grid.permute(0, 3, 1, 4, 2, 5).reshape(b, c, h, w)


def partition_kv(y, s, p):
    if p == 0:
        return partition_query(y, s)
    b, c, h, w = y.shape
    padded = F.pad(y, (p, p, p, p))
    sp = s + 2 * p
    cols = F.unfold(padded, kernel_size=sp, stride=s)   # [b, c*sp*sp, nw]
    nwin = cols.shape[-1]
    return cols.reshape(b, c, sp, sp, nwin).permute(0, 4, 1, 2, 3)


class WcaLayer(nn.Module):
    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        inner, c = cfg.inner, cfg.n_c
        self.q = nn.Linear(c, inner)
        self.k = nn.Linear(c, inner)
        self.v = nn.Linear(c, inner)
        self.o = nn.Linear(inner, c)

    def _proj(self, x, lin):
        b, c, h, w = x.shape
        flat = x.reshape(b, c, h * w).transpose(1, 2)      # [b, hw, c]
        return lin(flat).transpose(1, 2).reshape(b, -1, h, w)

    def forward(self, y_cur, y_ref):
        cfg = self.cfg
        b, c, h, w = y_cur.shape
        q = self._proj(y_cur, self.q)
        k = self._proj(y_ref, self.k)
        v = self._proj(y_ref, self.v)
        s = cfg.s_sw
        qw = partition_query(q, s)
        kw = partition_kv(k, s, cfg.s_p)
        vw = partition_kv(v, s, cfg.s_p)
        nwin = qw.shape[1]
        n = s * s
        m = kw.shape[-1] * kw.shape[-2]

        def heads(x, length):
            # channel i belongs to head i // head_dim
            seq = x.reshape(b, nwin, cfg.heads, cfg.head_dim, length)
            return seq.permute(0, 1, 2, 4, 3)   # [b, nw, heads, len, hd]

        scores = heads(qw, n) @ heads(kw, m).transpose(-1, -2)
        attn = torch.softmax(scores / math.sqrt(cfg.head_dim), dim=-1)
        out = attn @ heads(vw, m)               # [b, nw, heads, n, hd]
        merged = out.permute(0, 1, 2, 4, 3).reshape(b, nwin, cfg.inner, s, s)
        full = unpartition(merged, h, w)
        return y_cur + self._proj(full, self.o)


class ContextNet(nn.Module):
    """repeats x [cross-attention, resblock]; one instance per direction."""

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.attn = nn.ModuleList(WcaLayer(cfg) for _ in range(cfg.repeats))
        self.res = nn.ModuleList(ResBlock(cfg.n_c) for _ in range(cfg.repeats))

    def forward(self, y, y_ref):
        for attn, res in zip(self.attn, self.res):
            y = res(attn(y, y_ref))
        return y


class EmaCodebook(nn.Module):
    """Codeword table updated by exponential moving averages of cluster
    counts and sums; gradient-free, as usual for VQ-VAE style training."""

    def __init__(self, k, dim, decay=0.99, seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        init = torch.randn(k, dim, generator=gen) * 0.3
        self.register_buffer("codewords", init)
        self.register_buffer("ema_count", torch.ones(k))
        self.register_buffer("ema_sum", init.clone())
        self.decay = decay

    def assign(self, vecs):
        d2 = torch.cdist(vecs, self.codewords) ** 2
        return d2.argmin(dim=1)

    def forward(self, vecs):
        """Returns (quantized with straight-through, indices, commit loss)."""
        idx = self.assign(vecs)
        hard = self.codewords[idx]
        if self.training:
            with torch.no_grad():
                onehot = F.one_hot(idx, self.codewords.shape[0]).float()
                self.ema_count.mul_(self.decay).add_(
                    onehot.sum(0), alpha=1 - self.decay)
                self.ema_sum.mul_(self.decay).add_(
                    onehot.t() @ vecs.detach(), alpha=1 - self.decay)
                k = self.codewords.shape[0]
                total = self.ema_count.sum()
                smoothed = ((self.ema_count + 1e-5)
                            / (total + k * 1e-5) * total)
                self.codewords.copy_(self.ema_sum / smoothed.unsqueeze(1))
        commit = F.mse_loss(vecs, hard.detach())
        quantized = vecs + (hard - vecs).detach()
        return quantized, idx, commit


class MultiStageVQ(nn.Module):
    """Three residual stages, each an average-pool down plus a channel
    split over two codebooks; reconstruction duplicates back up."""

    def __init__(self, sizes, n_c, decay=0.99, seed=0):
        super().__init__()
        half = n_c // 2
        self.books = nn.ModuleList()
        for s, k in enumerate(sizes):
            self.books.append(nn.ModuleList([
                EmaCodebook(k, half, decay, seed=seed + 31 * s + b)
                for b in range(2)]))

    def _split_quantize(self, z, pair):
        b, c, h, w = z.shape
        half = c // 2
        outs, idxs, commit = [], [], 0.0
        for bi, book in enumerate(pair):
            part = z[:, bi * half:(bi + 1) * half]
            vecs = part.permute(0, 2, 3, 1).reshape(-1, half)
            q, idx, com = book(vecs)
            outs.append(q.reshape(b, h, w, half).permute(0, 3, 1, 2))
            idxs.append(idx.reshape(b, h, w))
            commit = commit + com
        return torch.cat(outs, dim=1), torch.stack(idxs, dim=1), commit

    def forward(self, y):
        cur = y
        contributions = []
        grids = []
        commit = 0.0
        for pair in self.books:
            cur = F.avg_pool2d(cur, 2)
            z_hat, idx, com = self._split_quantize(cur, pair)
            contributions.append(z_hat)
            grids.append(idx)
            commit = commit + com
            cur = cur - z_hat
        acc = None
        for z_hat in reversed(contributions):
            acc = z_hat if acc is None else z_hat + _nn_up(acc)
        return _nn_up(acc), grids, commit


def _nn_up(x):
    return x.repeat_interleave(2, dim=-2).repeat_interleave(2, dim=-1)


class CodecNet(nn.Module):
    """The full trainable codec: autoencoder, both context passes, and
    key/pred codebook hierarchies."""

    def __init__(self, cfg: TrainConfig, seed: int = 0):
        super().__init__()
        torch.manual_seed(seed)
        self.cfg = cfg
        self.encoder = Encoder(cfg)
        self.decoder = Decoder(cfg)
        self.ctx_enc = ContextNet(cfg)
        self.ctx_dec = ContextNet(cfg)
        self.vq_key = MultiStageVQ(cfg.key_sizes, cfg.n_c, cfg.ema_decay,
                                   seed=seed)
        self.vq_pred = MultiStageVQ(cfg.pred_sizes, cfg.n_c, cfg.ema_decay,
                                    seed=seed + 1000)

    def forward_clip(self, frames, clamp=False):
        """Run one GOP (frame 0 intra, the rest predicted) and return
        (reconstructions, distortion, commitment)."""
        recons = []
        distortion = 0.0
        commit = 0.0
        y_ref = None
        for t, x in enumerate(frames):
            y = self.encoder(x)
            if t == 0:
                y_hat, _, com = self.vq_key(y)
            else:
                y_ctx = self.ctx_enc(y, y_ref)
                q, _, com = self.vq_pred(y_ctx)
                y_hat = self.ctx_dec(q, y_ref)
            x_hat = self.decoder(y_hat, clamp=clamp)
            distortion = distortion + F.mse_loss(x_hat, x)
            commit = commit + com
            recons.append(x_hat)
            y_ref = y_hat.detach()
        n = len(frames)
        return recons, distortion / n, commit / n

    # -- export ------------------------------------------------------------

    def export_tensors(self) -> dict[str, np.ndarray]:
        t = {}

        def put(name, tensor):
            t[name] = tensor.detach().cpu().numpy().astype(np.float32)

        def put_conv(name, conv):
            put(f"{name}.w", conv.weight)
            put(f"{name}.b", conv.bias)

        def put_res_stage(name, stage):
            for j, block in enumerate(stage):
                put_conv(f"{name}.res{j}.a", block.a)
                put_conv(f"{name}.res{j}.b", block.b)

        for i, (down, stage) in enumerate(zip(self.encoder.downs,
                                              self.encoder.stages)):
            put_conv(f"enc.down{i}", down)
            put_res_stage(f"enc.stage{i}", stage)
        put_res_stage("dec.stage0", self.decoder.stage0)
        for i, (up, stage) in enumerate(zip(self.decoder.ups,
                                            self.decoder.stages)):
            put_conv(f"dec.up{i}", up)
            put_res_stage(f"dec.stage{i + 1}", stage)
        put_conv("dec.out", self.decoder.out)

        for prefix, net in (("ctxenc", self.ctx_enc), ("ctxdec", self.ctx_dec)):
            for r, (attn, res) in enumerate(zip(net.attn, net.res)):
                rep = f"{prefix}.rep{r}"
                for name, lin in (("q", attn.q), ("k", attn.k),
                                  ("v", attn.v), ("o", attn.o)):
                    put(f"{rep}.attn.{name}.w", lin.weight)
                    put(f"{rep}.attn.{name}.b", lin.bias)
                put_conv(f"{rep}.res.a", res.a)
                put_conv(f"{rep}.res.b", res.b)

        for kind, vq in (("key", self.vq_key), ("pred", self.vq_pred)):
            for s, pair in enumerate(vq.books):
                for bi, book in enumerate(pair):
                    put(f"cb.{kind}.stage{s + 1}.half{bi}", book.codewords)
        return t
