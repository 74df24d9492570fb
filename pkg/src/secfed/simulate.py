"""End-to-end round loop: collect, train, encrypt, commit, average, update.

One simulated round per region: detectors collect one period of samples
(two periods in round 1 so the first window can train), run online
inference with the previous round's models, train locally, encrypt their
fixed-point weights under their own keys, and commit them to the regional
bottom-layer chain. The averaging group then reads the round's updates,
runs the distributed encrypted averaging protocol, stores the aggregate
record on the top-layer chain, and every participating client decrypts its
copy of the new regional model.

Everything observable is a pure function of (config, seed); wall-clock
timings are recorded in reports but never exported to files.
"""

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import dhfa, flcore, gru, keydist, ledger, phe
from .config import RegionConfig, SimulationConfig
from .flcore import DataWindow
from .ledger import SigningAuthority
from .rng import Stream, derive_seed
from .synth import generate_synthetic


class SimulationError(Exception):
    """A round aborted; the error carries the (region, round) context."""


@dataclass
class ClientState:
    detector_id: str
    pk: phe.PhePublicKey
    sk: phe.PhePrivateKey
    codec: phe.FixedPointCodec
    window: DataWindow
    fed_model: gru.GruModel
    base_model: gru.GruModel
    samples: list
    cursor: int = 0
    encoded_history: dict = field(default_factory=dict)   # round -> encrypted ints
    fed_weights_history: dict = field(default_factory=dict)

    def collect(self, count: int):
        if self.cursor + count > len(self.samples):
            raise SimulationError(
                f"detector {self.detector_id} stream exhausted "
                f"({self.cursor + count} > {len(self.samples)})"
            )
        out = self.samples[self.cursor:self.cursor + count]
        self.cursor += count
        return out


@dataclass
class RegionState:
    config: RegionConfig
    federated_id: str
    chain: ledger.Chain
    group: dhfa.DhfaGroup
    clients: list
    shape: gru.ModelShape
    line: keydist.LineEquation
    sys_para: keydist.SysPara


@dataclass
class RoundReport:
    round_index: int
    region_id: str
    metrics: dict            # detector -> {"BASE": Metrics, "FED": Metrics}
    curves: dict             # detector -> InferenceCurves
    training_loss: dict      # detector -> per-epoch losses (federated model)
    dhfa_wall_ms: float
    finisher: int | None
    bl_height: int
    tl_height: int
    n_updates: int
    timeout_fired: bool


@dataclass
class SimulationResult:
    config: SimulationConfig
    reports: list
    regions: list
    top_chain: ledger.Chain

    def bl_chains(self) -> dict:
        return {r.config.region_id: r.chain for r in self.regions}


def _payload_from_cts(cts) -> bytes:
    return json.dumps([ct.to_dict() for ct in cts], sort_keys=True).encode("ascii")


def _cts_from_payload(payload: bytes) -> list:
    return [phe.Ciphertext.from_dict(d) for d in json.loads(payload.decode("ascii"))]


def _region_setup(config: SimulationConfig, region_cfg, authority, master: Stream) -> RegionState:
    rng = master.child("region", region_cfg.region_id)
    shape = gru.ModelShape(
        layers=((region_cfg.hidden_units, 1),
                (region_cfg.hidden_units, region_cfg.hidden_units)),
        input_shape=region_cfg.input_shape,
    )
    g0 = gru.init_weights(shape, rng.child("init"))

    # Key ceremony: the authority and a roadside representative agree on a
    # line through their secret points; its secret binds every edge device's
    # half-shares of each client key.
    kd_rng = rng.child("keydist")
    sys_para, mk_kac, _mk_ren = keydist.setup(config.dhfa.key_bits, kd_rng.child("setup"))
    while True:
        coord_kac = keydist.sample_coordinate(sys_para.pk_kac, kd_rng.child("coord", "kac"))
        coord_ren = keydist.sample_coordinate(sys_para.pk_kac, kd_rng.child("coord", "ren"))
        if coord_kac.x != coord_ren.x:
            break
        kd_rng = kd_rng.child("resample")
    transcript = keydist.run_slope_exchange(
        sys_para.pk_kac, coord_kac, coord_ren, kd_rng.child("slope"),
        session_id=f"{region_cfg.region_id}-keydist",
    )
    slope = keydist.compute_slope(transcript, sys_para.pk_kac, mk_kac)
    line = keydist.derive_line(slope, coord_kac)

    clients = []
    share_sets = []
    data = _detector_streams(config, region_cfg)
    for det_index, detector in enumerate(region_cfg.detector_ids):
        pk, sk = phe.keygen(config.dhfa.key_bits, rng.child("key", detector))
        master_shares = phe.split_key(sk, pk, config.dhfa.n_ecs, rng.child("split", detector))
        issuer = keydist.EcKeyIssuer(line, master_shares)
        for j in range(config.dhfa.n_ecs):
            ec_id = f"{region_cfg.region_id}-ec-{j}"
            issuer.register(ec_id)
            partial = issuer.issue(ec_id)
            rebuilt = keydist.reconstruct_share(partial, master_shares)
            if rebuilt.value != master_shares.share(rebuilt.index).value:
                raise SimulationError("partial key halves failed to reconstruct a share")
        share_sets.append(master_shares)
        model = gru.GruModel(shape, g0.copy())
        clients.append(ClientState(
            detector_id=detector,
            pk=pk,
            sk=sk,
            codec=phe.FixedPointCodec.for_key(pk, config.dhfa.scale),
            window=DataWindow.empty(region_cfg.max_data_size),
            fed_model=model,
            base_model=model.copy(),
            samples=data[detector],
        ))

    group = dhfa.DhfaGroup(
        n_ecs=config.dhfa.n_ecs,
        client_keys=tuple(c.pk for c in clients),
        share_sets=tuple(share_sets),
        scale=config.dhfa.scale,
    )
    chain = ledger.make_chain(
        ledger.BOTTOM_LAYER, region_cfg.region_id,
        config.ledger.peers, config.ledger.orderers, authority,
        endorsement_threshold=config.ledger.endorsement_threshold,
    )
    return RegionState(
        config=region_cfg,
        federated_id=f"tfp-{region_cfg.region_id}",
        chain=chain,
        group=group,
        clients=clients,
        shape=shape,
        line=line,
        sys_para=sys_para,
    )


def _detector_streams(config: SimulationConfig, region_cfg) -> dict:
    p = region_cfg.input_shape
    needed = (config.rounds + 1) * p
    if config.data_source.kind == "synthetic":
        days = max(1, -(-needed // 288))  # ceil
        return generate_synthetic(
            config.data_source.synthetic, region_cfg.detector_ids, days, config.seed)
    samples = flcore.load_traffic_csv(config.data_source.csv_path)
    grouped = flcore.group_by_detector(samples)
    out = {}
    for detector in region_cfg.detector_ids:
        if detector not in grouped:
            raise SimulationError(f"csv source lacks detector {detector}")
        if len(grouped[detector]) < needed:
            raise SimulationError(
                f"detector {detector} has {len(grouped[detector])} samples; "
                f"{needed} needed for {config.rounds} rounds")
        out[detector] = grouped[detector]
    return out


def _quantize(codec: phe.FixedPointCodec, weights: np.ndarray) -> np.ndarray:
    return np.array([codec.decode(codec.encode(float(w))) for w in weights])


def _run_region_round(config, state: RegionState, top_chain, round_index: int,
                      master: Stream) -> RoundReport:
    region_cfg = state.config
    p = region_cfg.input_shape
    muted = config.muted(round_index) & set(region_cfg.detector_ids)
    rng = master.child("round", round_index, state.config.region_id)

    metrics: dict = {}
    curves_by_detector: dict = {}
    training_loss: dict = {}
    submitted = []
    for tick, client in enumerate(state.clients):
        take = 2 * p if round_index == 1 else p
        incoming = client.collect(take)

        # Online inference against the previous round's models. In round 1
        # the first half of the double-length collection seeds the window.
        if round_index == 1:
            seed_window = DataWindow(samples=incoming[:p], max_size=p)
            stream_part = incoming[p:]
        else:
            seed_window = client.window
            stream_part = incoming
        curves = flcore.online_inference(
            client.fed_model, client.base_model, seed_window, stream_part,
            flow_ceiling=region_cfg.flow_ceiling,
        )
        metrics[client.detector_id] = {
            "BASE": flcore.compute_metrics(curves.base, curves.true),
            "FED": flcore.compute_metrics(curves.fed, curves.true),
        }
        curves_by_detector[client.detector_id] = curves

        client.window = flcore.update_dataset(client.window, incoming)

        base_result = flcore.train_local(
            client.base_model, client.window, region_cfg.epochs,
            region_cfg.learning_rate, flow_ceiling=region_cfg.flow_ceiling,
        )
        # The baseline is stored through the same fixed-point codec as the
        # federated weights, keeping the two paths comparable bit for bit.
        client.base_model = client.base_model.with_weights(
            _quantize(client.codec, base_result.weights), round_tag=round_index)

        fed_result = flcore.train_local(
            client.fed_model, client.window, region_cfg.epochs,
            region_cfg.learning_rate, flow_ceiling=region_cfg.flow_ceiling,
        )
        training_loss[client.detector_id] = fed_result.epoch_losses

        encoded = [client.codec.encode(float(w)) for w in fed_result.weights]
        client.encoded_history[round_index] = encoded
        enc_rng = rng.child("encrypt", client.detector_id)
        cts = [phe.encrypt(client.pk, m, enc_rng) for m in encoded]

        if client.detector_id in muted:
            continue
        update = ledger.ModelUpdate(
            federated_id=state.federated_id,
            location_id=region_cfg.region_id,
            detector_id=client.detector_id,
            round_number=round_index,
            model_parameters=_payload_from_cts(cts),
        )
        endorsements = ledger.submit_proposal(
            state.chain, client.detector_id, update, nonce=round_index)
        if not endorsements:
            raise SimulationError(
                f"round {round_index}: peers rejected {client.detector_id}")
        submitted.append(ledger.package_endorsed(
            state.chain, client.detector_id, update, endorsements,
            nonce=round_index, arrival=tick,
        ))

    timeout = ledger.RoundTimeout(config.ledger.round_timeout_ticks)
    if len(submitted) < len(state.clients):
        # missing clients never arrive; the round closes at the tick budget
        timeout = timeout.expired(config.ledger.round_timeout_ticks)

    if submitted:
        result = ledger.order_and_commit(
            state.chain, submitted,
            ledger.BatchPolicy(max_batch_size=config.ledger.max_batch_size))
        if result.block is None:
            raise SimulationError(f"round {round_index}: commit produced no block")

    read = ledger.read_round_updates(
        state.chain, state.federated_id, round_index,
        expected_count=len(state.clients))

    dhfa_wall_ms = 0.0
    finisher = None
    if read.updates:
        by_detector = {c.detector_id: i for i, c in enumerate(state.clients)}
        participants = [by_detector[u.detector_id] for u in read.updates]
        subgroup = dhfa.DhfaGroup(
            n_ecs=config.dhfa.n_ecs,
            client_keys=tuple(state.group.client_keys[i] for i in participants),
            share_sets=tuple(state.group.share_sets[i] for i in participants),
            scale=config.dhfa.scale,
        )
        enc_params = [_cts_from_payload(u.model_parameters) for u in read.updates]
        dhfa_rng = Stream(config.seed, "round", round_index,
                          state.config.region_id, "dhfa")
        start = time.perf_counter()
        protocol = dhfa.run_dhfa(subgroup, enc_params, dhfa_rng)
        dhfa_wall_ms = (time.perf_counter() - start) * 1e3
        finisher = protocol.finisher

        digest = hashlib.sha256()
        for vec in protocol.outputs:
            for ct in vec:
                digest.update(str(int(ct.c)).encode())
        ledger.commit_global(
            top_chain, state.config.region_id, state.federated_id, round_index,
            digest.hexdigest(), [f"{u.detector_id}/round-{round_index}" for u in read.updates],
            nonce=round_index, arrival=round_index,
        )

        for slot, client_index in enumerate(participants):
            client = state.clients[client_index]
            ints = [phe.decrypt(client.sk, client.pk, ct)
                    for ct in protocol.outputs[slot]]
            weights = np.array(client.codec.decode_vector(ints))
            client.fed_model = client.fed_model.with_weights(weights, round_tag=round_index)

    for client in state.clients:
        client.fed_weights_history[round_index] = client.fed_model.weights.copy()

    return RoundReport(
        round_index=round_index,
        region_id=state.config.region_id,
        metrics=metrics,
        curves=curves_by_detector,
        training_loss=training_loss,
        dhfa_wall_ms=dhfa_wall_ms,
        finisher=finisher,
        bl_height=state.chain.height,
        tl_height=top_chain.height,
        n_updates=len(read.updates),
        timeout_fired=timeout.fired,
    )


def run_simulation(config: SimulationConfig) -> SimulationResult:
    master = Stream(config.seed)
    authority = SigningAuthority(derive_seed(config.seed, "authority"))
    top_chain = ledger.make_chain(
        ledger.TOP_LAYER, None, config.ledger.peers, config.ledger.orderers,
        authority, endorsement_threshold=config.ledger.endorsement_threshold)
    regions = [_region_setup(config, rc, authority, master) for rc in config.regions]
    reports = []
    for round_index in range(1, config.rounds + 1):
        for state in regions:
            try:
                reports.append(_run_region_round(
                    config, state, top_chain, round_index, master))
            except (phe.PheError, dhfa.DhfaError, ledger.LedgerError,
                    gru.TrainingError, ValueError) as exc:
                raise SimulationError(
                    f"region {state.config.region_id} round {round_index}: {exc}"
                ) from exc
    return SimulationResult(config=config, reports=reports, regions=regions,
                            top_chain=top_chain)


# ---------------------------------------------------------------------------
# report export


def _format_float(x: float) -> str:
    return repr(float(x))


def metrics_csv(result: SimulationResult) -> str:
    lines = ["round,detector,model,mae,mse,rmse,mape"]
    for report in result.reports:
        for detector in sorted(report.metrics):
            for model_name in ("BASE", "FED"):
                m = report.metrics[detector][model_name]
                lines.append(",".join([
                    str(report.round_index), detector, model_name,
                    _format_float(m.mae), _format_float(m.mse),
                    _format_float(m.rmse), _format_float(m.mape),
                ]))
    return "\n".join(lines) + "\n"


def curves_csv(result: SimulationResult) -> str:
    lines = ["round,step,detector,true,base,fed"]
    for report in result.reports:
        for detector in sorted(report.curves):
            c = report.curves[detector]
            for step in range(len(c.true)):
                lines.append(",".join([
                    str(report.round_index), str(step), detector,
                    _format_float(c.true[step]), _format_float(c.base[step]),
                    _format_float(c.fed[step]),
                ]))
    return "\n".join(lines) + "\n"


def export_reports(result: SimulationResult, out_dir: str) -> dict:
    import os

    os.makedirs(out_dir, exist_ok=True)
    files = {}

    def write(name: str, text: str):
        path = os.path.join(out_dir, name)
        with open(path, "w") as handle:
            handle.write(text)
        files[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    write("metrics.csv", metrics_csv(result))
    write("curves.csv", curves_csv(result))
    for state in result.regions:
        write(f"chain-{state.config.region_id}.jsonl", ledger.dump_chain(state.chain))
    write("chain-top.jsonl", ledger.dump_chain(result.top_chain))
    manifest = {
        "config": result.config.to_dict(),
        "seed": result.config.seed,
        "files": files,
    }
    manifest_text = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as handle:
        handle.write(manifest_text)
    files["manifest.json"] = hashlib.sha256(manifest_text.encode()).hexdigest()
    return files
