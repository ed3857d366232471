from fractions import Fraction

import numpy as np
import pytest

from conftest import make
from sfe.backends import HighsBackend
from sfe.milp import HyperParams, TrafficSystemEmbedding, solve_ts_milp, zero_embedding
from sfe.scenarios import two_loop_doc, two_loop_instance
from sfe.tplan import (
    CapacityError,
    EmptyBufferError,
    FactoryState,
    GeneratorState,
    PlanDriftError,
    Residual,
    UnmetDemandError,
    _resolve,
    adjust_state_for_new_epoch,
    deposit_token,
    initialize_sf,
    move_agents_on_road,
    pickup_token,
    run_machines,
    state_record,
    step,
)

# two-loop layout: road 0 = (0,1) (0,2) (1,2), road 1 = (2,1) (2,0) (1,0), junction (1,1)
JUNCTION = (1, 1)
HEAD0, HEAD1 = (1, 2), (1, 0)
TAIL0, TAIL1 = (0, 1), (2, 1)


@pytest.fixture(scope="module")
def plan():
    inst = two_loop_instance(1)
    emb = solve_ts_milp(inst, HyperParams(2, 5), HighsBackend(), 10)
    assert emb.objective_value == Fraction(1, 10)
    return inst, emb


def hand_state(inst, t, cells, cargo, buf_in=(0,), buf_out=(0,)):
    M = len(inst.machines)
    bi = np.zeros((M, 1), dtype=np.int64)
    bo = np.zeros((M, 1), dtype=np.int64)
    bi[1, 0], bo[0, 0] = buf_in[0], buf_out[0]
    return FactoryState(t, bi, bo, tuple(cells), tuple(cargo))


def hand_gen(state, arrival, epoch=0, residual=None, can_change=()):
    gen = GeneratorState(arrival=list(arrival), occupancy=state.occupancy(), epoch=epoch,
                         can_change=set(can_change))
    if residual is not None:
        gen.residual[epoch] = residual
    return gen


def residual(R=2, M=2, T=1, **set_):
    res = Residual(np.zeros((R, T + 1), np.int64), np.zeros((R, T + 1), np.int64),
                   np.zeros((M, T), np.int64), np.zeros((M, T), np.int64))
    for name, entries in set_.items():
        for idx, v in entries.items():
            getattr(res, name)[idx] = v
    return res


def test_initial_queue_sits_at_the_head(plan):
    inst, emb = plan
    state, gen = initialize_sf(inst, emb)
    assert state.agent_cell == (HEAD1,)
    assert state.agent_cargo == (0,)
    assert gen.arrival == [None]
    # one cycle of stock seeded in every buffer
    assert state.buf_out[0, 0] == 1 and state.buf_in[1, 0] == 1


def test_initial_queue_packs_backward_in_token_order(toy_car):
    emb = zero_embedding(toy_car, HyperParams(1, 6))
    b_out = np.array(emb.b_out)
    rd = max(toy_car.roads, key=lambda r: r.length)
    b_out[rd.id, 0, 0] = 1
    b_out[rd.id, 0, 2] = 2
    emb = TrafficSystemEmbedding(emb.assign, emb.rate, emb.b_in, b_out, emb.pickup, emb.deposit,
                                 emb.hyper, emb.objective_value)
    state, _ = initialize_sf(toy_car, emb)
    assert state.agent_cell == (rd.path[-1], rd.path[-2], rd.path[-3])
    assert state.agent_cargo == (0, 2, 2)


def test_initial_queue_overflow(two_loop):
    emb = zero_embedding(two_loop, HyperParams(1, 4))
    b_out = np.array(emb.b_out)
    b_out[0, 0, 0] = 4
    emb = TrafficSystemEmbedding(emb.assign, emb.rate, emb.b_in, b_out, emb.pickup, emb.deposit,
                                 emb.hyper, emb.objective_value)
    with pytest.raises(CapacityError):
        initialize_sf(two_loop, emb)


def test_agent_that_arrived_this_epoch_waits_at_head(two_loop):
    state = hand_state(two_loop, 1, [HEAD0, TAIL0], [1, 0])
    gen = hand_gen(state, [0, 0], epoch=0, residual=residual())
    wants = move_agents_on_road(0, two_loop, state, gen, 0)
    assert wants == {0: None, 1: (0, 2)}
    gen.arrival[0] = None
    assert move_agents_on_road(0, two_loop, state, gen, 1)[0] == JUNCTION


def test_road_compacts_behind_waiting_head(two_loop, plan):
    _, emb = plan
    state = hand_state(two_loop, 1, [HEAD0, TAIL0], [1, 1])
    gen = hand_gen(state, [0, 0], epoch=0, residual=residual())
    nxt = step(two_loop, emb, state, gen)
    assert nxt.agent_cell == (HEAD0, (0, 2))
    again = step(two_loop, emb, nxt, gen)
    assert again.agent_cell == (HEAD0, (0, 2))


def test_leaving_head_consumes_outbound_residual(two_loop, plan):
    _, emb = plan
    state = hand_state(two_loop, 1, [HEAD0], [1])
    res = residual(b_out={(0, 1): 1})
    gen = hand_gen(state, [None], residual=res)
    nxt = step(two_loop, emb, state, gen)
    assert nxt.agent_cell == (JUNCTION,)
    assert res.b_out[0, 1] == 0


def test_leaving_head_without_plan_is_drift(two_loop, plan):
    _, emb = plan
    state = hand_state(two_loop, 1, [HEAD0], [1])
    gen = hand_gen(state, [None], residual=residual())
    with pytest.raises(PlanDriftError):
        step(two_loop, emb, state, gen)


def test_one_head_per_junction_lowest_road_first(two_loop, plan):
    _, emb = plan
    state = hand_state(two_loop, 1, [HEAD1, HEAD0], [0, 1])
    res = residual(b_out={(0, 1): 1, (1, 0): 1})
    gen = hand_gen(state, [None, None], residual=res)
    nxt = step(two_loop, emb, state, gen)
    assert nxt.agent_cell == (HEAD1, JUNCTION)


def test_junction_agent_takes_road_with_demand(two_loop, plan):
    _, emb = plan
    state = hand_state(two_loop, 1, [JUNCTION], [1])
    res = residual(b_in={(1, 1): 1})
    gen = hand_gen(state, [None], residual=res)
    nxt = step(two_loop, emb, state, gen)
    assert nxt.agent_cell == (TAIL1,)
    assert res.b_in[1, 1] == 0
    assert gen.arrival == [0]


def test_junction_agent_without_demand_is_drift(two_loop, plan):
    _, emb = plan
    state = hand_state(two_loop, 1, [JUNCTION], [1])
    gen = hand_gen(state, [None], residual=residual(b_in={(0, 0): 1}))
    with pytest.raises(PlanDriftError):
        step(two_loop, emb, state, gen)


def test_junction_agent_prefers_empty_tail(two_loop, plan):
    _, emb = plan
    # both roads want an empty agent; road 1 is full and its head has arrived this epoch
    state = hand_state(two_loop, 1, [JUNCTION, TAIL1, (2, 0), HEAD1], [0, 1, 1, 1])
    for seed in range(5):
        g = hand_gen(state, [None, 0, 0, 0], residual=residual(b_in={(0, 0): 1, (1, 0): 1}))
        nxt = step(two_loop, emb, state, g, rng_seed=seed)
        assert nxt.agent_cell[0] == TAIL0


def test_deposit_needs_a_fresh_arrival(two_loop):
    state = hand_state(two_loop, 2, [TAIL1], [1])
    res = residual(deposit={(1, 0): 1})
    gen = hand_gen(state, [0], residual=res)
    cargo, buf_in = [1], state.buf_in.copy()
    deposit_token(two_loop, gen, state.agent_cell, cargo, buf_in)
    assert cargo == [1]  # not eligible: never passed a junction this epoch
    gen.can_change.add(0)
    deposit_token(two_loop, gen, state.agent_cell, cargo, buf_in)
    assert cargo == [0] and buf_in[1, 0] == 1 and res.deposit[1, 0] == 0
    assert 0 not in gen.can_change


def test_deposit_skipped_when_nothing_owed(two_loop):
    state = hand_state(two_loop, 2, [TAIL1], [1])
    gen = hand_gen(state, [0], residual=residual(), can_change=[0])
    cargo = [1]
    deposit_token(two_loop, gen, state.agent_cell, cargo, state.buf_in.copy())
    assert cargo == [1]


def test_pickup_takes_largest_residual_smaller_id_on_ties():
    doc = two_loop_doc(1)
    doc["tokens"] = ["part", "bolt"]
    doc["processes"][0]["outputs"] = {"part": 1, "bolt": 1}
    doc["processes"][1]["inputs"] = {"part": 1, "bolt": 1}
    inst = make(doc)
    cells = (TAIL0,)
    buf_out = np.full((2, 2), 5, dtype=np.int64)
    for row, want in (([2, 2], 1), ([1, 3], 2), ([3, 0], 1)):
        res = residual(T=2, pickup={(0, 0): row[0], (0, 1): row[1]})
        gen = GeneratorState(residual={0: res}, can_change={0}, arrival=[0], occupancy={TAIL0: 0}, epoch=0)
        cargo = [0]
        pickup_token(inst, gen, cells, cargo, buf_out)
        assert cargo == [want]


def test_pickup_from_empty_buffer(two_loop):
    state = hand_state(two_loop, 2, [TAIL0], [0], buf_out=(0,))
    gen = hand_gen(state, [0], residual=residual(pickup={(0, 0): 1}), can_change=[0])
    with pytest.raises(EmptyBufferError):
        pickup_token(two_loop, gen, state.agent_cell, [0], state.buf_out.copy())


def test_dropped_epoch_with_leftovers(plan):
    _, emb = plan
    gen = GeneratorState()
    adjust_state_for_new_epoch(emb, gen, 0)
    adjust_state_for_new_epoch(emb, gen, 1)
    assert set(gen.residual) == {0, 1}
    with pytest.raises(UnmetDemandError):
        adjust_state_for_new_epoch(emb, gen, 2)


def test_epochs_wrap_modulo_cycle(plan):
    _, emb = plan
    gen = GeneratorState()
    for T in range(5):
        for res in gen.residual.values():  # pretend the flow was realized
            for name in ("b_in", "b_out", "pickup", "deposit"):
                getattr(res, name)[...] = 0
        adjust_state_for_new_epoch(emb, gen, T)
        assert np.array_equal(gen.residual[T].b_out, emb.b_out[:, T % 2])
        assert set(gen.residual) <= {T - 1, T}


def test_machines_run_once_per_cycle(plan):
    inst, emb = plan
    state, _ = initialize_sf(inst, emb)
    bi, bo = run_machines(emb, state)
    assert bi[1, 0] == 0 and bo[0, 0] == 2


def test_resolve_refuses_swaps_and_allows_rotations():
    a, b, c = (0, 0), (1, 0), (1, 1)
    # swap
    assert _resolve({0: b, 1: a}, (a, b), {a: 0, b: 1}) == {0: False, 1: False}
    # three-cycle rotation
    moves = _resolve({0: b, 1: c, 2: a}, (a, b, c), {a: 0, b: 1, c: 2})
    assert moves == {0: True, 1: True, 2: True}
    # chain behind a waiting agent
    moves = _resolve({0: b, 1: c, 2: None}, (a, b, c), {a: 0, b: 1, c: 2})
    assert moves == {0: False, 1: False, 2: False}
    # chain behind a free cell
    d = (2, 2)
    moves = _resolve({0: b, 1: c, 2: d}, (a, b, c), {a: 0, b: 1, c: 2})
    assert all(moves.values())


def test_full_cycle_realizes_the_plan(plan):
    inst, emb = plan
    state, gen = initialize_sf(inst, emb)
    events = []
    for _ in range(3 * emb.hyper.cycle_len):
        state = step(inst, emb, state, gen, events=events)
    kinds = [e["kind"] for e in events]
    assert kinds.count("pickup") == 3 and kinds.count("deposit") == 3


def test_same_seed_same_run(toy_car):
    emb = solve_ts_milp(toy_car, HyperParams(8, 5), HighsBackend(), 60)

    def run(seed):
        state, gen = initialize_sf(toy_car, emb)
        out = []
        for _ in range(2 * emb.hyper.cycle_len):
            state = step(toy_car, emb, state, gen, rng_seed=seed)
            out.append((state.agent_cell, state.agent_cargo))
        return out

    assert run(3) == run(3)


def test_state_record_shape(plan):
    inst, emb = plan
    state, _ = initialize_sf(inst, emb)
    rec = state_record(state, [{"kind": "wait", "agent": 0}])
    assert rec["t"] == 0 and rec["agents"][0] == {"id": 0, "cell": [1, 0], "cargo": 0}
