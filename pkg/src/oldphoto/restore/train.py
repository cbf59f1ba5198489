"""Two-stage training: the VAEs first, then the latent mapping with the VAEs frozen."""
import torch

from ..checkpoint import param_hash
from ..errors import ConfigurationError
from ..training import StageRunner, adam, frozen, scalars
from .losses import encode, latent_adv_loss, latent_mask, lsgan_d_loss, mapping_loss, vae_objective
from .networks import build_nets


def _require(data, name):
    if data is None or len(data) == 0:
        raise ConfigurationError(f"{name} dataset is empty")
    return torch.as_tensor(data, dtype=torch.float32)


def train_vae1(real, synth, cfg, nets=None, log_path=None, ckpt_path=None, resume=None):
    """VAE for corrupted images (real and synthetic) with latent alignment."""
    real = _require(real, "real-photo")
    synth = _require(synth, "synthetic")
    nets = nets or build_nets(cfg.restore_arch(), cfg.seed)
    vae, disc, dlat = nets.vae1, nets.d_vae1, nets.d_latent
    g_opt = adam(vae.parameters(), cfg)
    d_opt = adam(list(disc.parameters()) + list(dlat.parameters()), cfg)
    runner = StageRunner("vae1", cfg, {"vae1": vae, "d_vae1": disc, "d_latent": dlat},
                         {"g": g_opt, "d": d_opt}, {"x": len(synth), "r": len(real)},
                         log_path, ckpt_path, resume)

    def body(idx):
        r = runner.crop(real[idx["r"]])
        x = runner.crop(synth[idx["x"]])
        lat_r = encode(vae, r, generator=runner.gen)
        lat_x = encode(vae, x, generator=runner.gen)
        rec_r, rec_x = vae.generator(lat_r.z), vae.generator(lat_x.z)

        d_opt.zero_grad()
        d_img = lsgan_d_loss(disc(r), disc(rec_r.detach())) + lsgan_d_loss(disc(x), disc(rec_x.detach()))
        d_lat, _ = latent_adv_loss(lat_x.z, lat_r.z, dlat)
        (d_img + d_lat).backward()
        d_opt.step()

        g_opt.zero_grad()
        with frozen(disc):
            tot_r, c_r = vae_objective(rec_r, r, lat_r.mu, lat_r.logvar, disc(rec_r), cfg.alpha, cfg.kl_weight)
            tot_x, c_x = vae_objective(rec_x, x, lat_x.mu, lat_x.logvar, disc(rec_x), cfg.alpha, cfg.kl_weight)
        _, e_lat = latent_adv_loss(lat_x.z, lat_r.z, dlat)
        (tot_r + tot_x + e_lat).backward()
        g_opt.step()

        comps = scalars(c_r, "r_") | scalars(c_x, "x_")
        comps.update(d_img=d_img.item(), d_latent=d_lat.item(), e_latent=e_lat.item())
        return comps

    return nets, runner.run(body)


def train_vae2(clean, cfg, nets=None, log_path=None, ckpt_path=None, resume=None):
    """VAE for clean images; same objective without the latent critic."""
    clean = _require(clean, "clean")
    nets = nets or build_nets(cfg.restore_arch(), cfg.seed)
    vae, disc = nets.vae2, nets.d_vae2
    g_opt = adam(vae.parameters(), cfg)
    d_opt = adam(disc.parameters(), cfg)
    runner = StageRunner("vae2", cfg, {"vae2": vae, "d_vae2": disc}, {"g": g_opt, "d": d_opt},
                         {"y": len(clean)}, log_path, ckpt_path, resume)

    def body(idx):
        y = runner.crop(clean[idx["y"]])
        lat = encode(vae, y, generator=runner.gen)
        rec = vae.generator(lat.z)

        d_opt.zero_grad()
        d_loss = lsgan_d_loss(disc(y), disc(rec.detach()))
        d_loss.backward()
        d_opt.step()

        g_opt.zero_grad()
        with frozen(disc):
            total, comps = vae_objective(rec, y, lat.mu, lat.logvar, disc(rec), cfg.alpha, cfg.kl_weight)
        total.backward()
        g_opt.step()
        return scalars(comps) | {"d": d_loss.item()}

    return nets, runner.run(body)


def train_stage1(real, synth, clean, cfg, nets=None, ckpt_dir=None):
    """Train both VAEs; returns the nets and the two loss logs."""
    nets = nets or build_nets(cfg.restore_arch(), cfg.seed)
    paths = {}
    if ckpt_dir is not None:
        paths = {s: (f"{ckpt_dir}/{s}_loss.csv", f"{ckpt_dir}/{s}.pt") for s in ("vae1", "vae2")}
    _, log1 = train_vae1(real, synth, cfg, nets, *paths.get("vae1", (None, None)))
    _, log2 = train_vae2(clean, cfg, nets, *paths.get("vae2", (None, None)))
    return nets, (log1, log2)


def train_stage2(synth, clean, masks, nets, cfg, log_path=None, ckpt_path=None, resume=None):
    """Train the mapping network and its critic; both VAEs stay untouched."""
    synth = _require(synth, "synthetic")
    clean = _require(clean, "clean")
    if len(synth) != len(clean):
        raise ConfigurationError("stage two needs paired synthetic/clean images")
    if masks is None:
        masks = torch.zeros(len(synth), 1, *synth.shape[-2:])
    masks = torch.as_tensor(masks, dtype=torch.float32)
    if masks.dim() == 3:
        masks = masks.unsqueeze(1)
    if nets is None or nets.mapping is None:
        raise ConfigurationError("stage two needs stage-one networks")
    before = param_hash(nets.vae1, nets.vae2)
    nets.vae1.requires_grad_(False)
    nets.vae2.requires_grad_(False)
    g_opt = adam(nets.mapping.parameters(), cfg)
    d_opt = adam(nets.d_mapping.parameters(), cfg)
    runner = StageRunner("mapping", cfg, {"mapping": nets.mapping, "d_mapping": nets.d_mapping},
                         {"g": g_opt, "d": d_opt}, {"xy": len(synth)}, log_path, ckpt_path, resume,
                         extra={"vae_hash": before})

    def body(idx):
        pair = torch.cat([synth[idx["xy"]], clean[idx["xy"]], masks[idx["xy"]]], 1)
        pair = runner.crop(pair)
        x, y, m = pair[:, :3], pair[:, 3:6], pair[:, 6:]

        with torch.no_grad():
            z_x = nets.vae1.encoder(x)[0]
            fake = nets.vae2.generator(nets.mapping(z_x, latent_mask(m, z_x)))
        d_opt.zero_grad()
        d_loss = lsgan_d_loss(nets.d_mapping(y), nets.d_mapping(fake))
        d_loss.backward()
        d_opt.step()

        g_opt.zero_grad()
        total, comps = mapping_loss(x, y, nets, m, cfg.lambda1, cfg.lambda2)
        total.backward()
        g_opt.step()
        return scalars(comps) | {"d": d_loss.item()}

    try:
        log = runner.run(body)
    finally:
        nets.vae1.requires_grad_(True)
        nets.vae2.requires_grad_(True)
    after = param_hash(nets.vae1, nets.vae2)
    if after != before:
        raise RuntimeError("stage two modified VAE parameters")
    return nets, log
