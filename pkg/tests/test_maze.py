import numpy as np
import pytest

from md3qn.maze import (
    BUILTIN_NAMES,
    Direction,
    LayoutError,
    MazeConfig,
    MazeEnv,
    MazeState,
    StateKeying,
    builtin_maze,
    initial_state,
    is_stuck,
    layout_text,
    maze_step,
    open_moves,
    parse_layout,
    state_key,
)

TINY = """
#####
#A.g#
#####
"""


def test_parse_errors_name_the_location():
    with pytest.raises(LayoutError, match="line 2, column 3"):
        parse_layout("###\n#AX\n###\n")
    with pytest.raises(LayoutError, match="ragged"):
        parse_layout("###\n#A\n###\n")
    with pytest.raises(LayoutError, match="exactly one start"):
        parse_layout("####\n#..#\n####\n")
    with pytest.raises(LayoutError, match="exactly one start"):
        parse_layout("####\n#AA#\n####\n")


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtins_parse_and_roundtrip(name):
    layout, config = builtin_maze(name)
    again = parse_layout(layout.serialize())
    assert again == layout
    assert again.digest() == layout.digest()
    assert config.n_sources == max(src for src, _, _ in config.reward_spec.values()) + 1
    if name != "maze-constraint":
        assert MazeEnv.builtin(name).first_move() == Direction.DOWN


def test_unknown_builtin():
    with pytest.raises(KeyError):
        layout_text("maze-nope")


def test_step_collects_reward_and_terminates_when_stuck(rng):
    layout = parse_layout(TINY)
    cfg = MazeConfig(1, {"green": (0, 0.2, 0.6)})
    s = initial_state(layout)
    s, r, term = maze_step(s, Direction.RIGHT, layout, cfg, rng)
    assert r[0] == 0 and not term
    s, r, term = maze_step(s, Direction.RIGHT, layout, cfg, rng)
    assert 0.2 <= r[0] <= 0.6 and term
    assert is_stuck(layout, s)


def test_blocked_move_is_a_noop_that_takes_time(rng):
    layout = parse_layout(TINY)
    cfg = MazeConfig(1, {"green": (0, 0.2, 0.6)})
    s = initial_state(layout)
    s2, r, term = maze_step(s, Direction.UP, layout, cfg, rng)
    assert s2.position == s.position and s2.step_count == 1 and not term
    s3, _, _ = maze_step(s2, Direction.RIGHT, layout, cfg, rng)
    back, _, _ = maze_step(s3, Direction.LEFT, layout, cfg, rng)
    assert back.position == s3.position  # no return to a visited cell


def test_max_steps_terminates(rng):
    layout = parse_layout(TINY)
    cfg = MazeConfig(1, {"green": (0, 0.2, 0.6)}, max_steps=2)
    s = initial_state(layout)
    s, _, term = maze_step(s, Direction.UP, layout, cfg, rng)
    assert not term
    s, _, term = maze_step(s, Direction.UP, layout, cfg, rng)
    assert term


def test_one_way_gates(rng):
    layout = parse_layout("#####\n#.Y.#\n#A###\n#####\n")
    cfg = MazeConfig(1, {})
    s = MazeState((1, 1), frozenset([(1, 1)]))
    assert Direction.RIGHT in open_moves(layout, s)
    s = MazeState((1, 3), frozenset([(1, 3)]))
    assert Direction.LEFT not in open_moves(layout, s)
    layout = parse_layout("#####\n#.R.#\n#A###\n#####\n")
    s = MazeState((1, 3), frozenset([(1, 3)]))
    assert Direction.LEFT in open_moves(layout, s)
    s = MazeState((1, 1), frozenset([(1, 1)]))
    assert Direction.RIGHT not in open_moves(layout, s)


def test_state_keys_injective_within_mode(rng):
    env = MazeEnv.builtin("maze-multireward")
    seen = {}
    pol = env.open_move_policy()
    for _ in range(200):
        s = env.reset()
        for _ in range(100):
            k = env.key(s)
            ident = (s.position, s.visited)
            assert seen.setdefault(k, ident) == ident
            s, _, term = env.step(s, pol.sample(k, rng), rng)
            if term:
                break
    assert state_key(env.reset(), StateKeying.POSITION_ONLY) == env.layout.start


def test_open_move_probs_agree_with_state(rng):
    env = MazeEnv.builtin("maze-exclusive")
    s = env.reset()
    for _ in range(30):
        p = env.open_move_probs(env.key(s))
        moves = open_moves(env.layout, s)
        if moves:
            assert set(np.flatnonzero(p)) == set(moves)
        back = env.state_from_key(env.key(s))
        assert back.position == s.position and back.visited == s.visited
        s, _, term = env.step(s, env.open_move_policy().sample(env.key(s), rng), rng)
        if term:
            break


def _rollouts(name, n, rng):
    env = MazeEnv.builtin(name)
    pol = env.open_move_policy()
    out = []
    for _ in range(n):
        s, total = env.reset(), np.zeros(env.n_sources)
        for _ in range(1000):
            s, r, term = env.step(s, pol.sample(env.key(s), rng), rng)
            total += r
            if term:
                break
        out.append(total)
    return np.array(out)


def test_exclusive_never_collects_both(rng):
    R = _rollouts("maze-exclusive", 500, rng)
    assert not np.any(np.all(R > 0, axis=1))
    assert np.all(np.any(R > 0, axis=1))


def test_identical_collects_both_or_neither(rng):
    R = _rollouts("maze-identical", 500, rng)
    assert np.array_equal(R[:, 0] > 0, R[:, 1] > 0)
    assert 0 < np.mean(R[:, 0] > 0) < 1


def test_constraint_branches(rng):
    env = MazeEnv.builtin("maze-constraint")
    pol = env.open_move_policy()
    for first, want in ((Direction.LEFT, {2}), (Direction.RIGHT, {0, 3})):
        counts = set()
        for _ in range(100):
            s, total, a = env.reset(), np.zeros(3), int(first)
            for _ in range(100):
                s, r, term = env.step(s, a, rng)
                total += r
                if term:
                    break
                a = pol.sample(env.key(s), rng)
            counts.add(int(total.sum()))
        assert counts == want


def test_chance_cell_moves_somewhere_open(rng):
    layout = parse_layout("#####\n#A?.#\n##.##\n#####\n")
    cfg = MazeConfig(1, {})
    s = MazeState((1, 2), frozenset([(1, 1), (1, 2)]))
    ends = {maze_step(s, Direction.UP, layout, cfg, rng)[0].position for _ in range(50)}
    assert ends == {(1, 3), (2, 2)}


def test_small_layouts():
    layout = parse_layout("A.")
    assert (layout.height, layout.width, layout.start) == (1, 2, (0, 0))
    walled = parse_layout("A#g")
    s = initial_state(walled)
    assert not open_moves(walled, s) and is_stuck(walled, s)


def test_keying_modes_distinguish_visited_sets():
    a = MazeState((1, 1), frozenset([(1, 1)]))
    b = MazeState((1, 1), frozenset([(1, 1), (1, 2)]))
    assert state_key(a, StateKeying.POSITION_ONLY) == state_key(b, StateKeying.POSITION_ONLY)
    assert state_key(a, StateKeying.POSITION_AND_VISITED) != state_key(b, StateKeying.POSITION_AND_VISITED)


def test_no_key_collisions_over_random_states():
    rng = np.random.default_rng(5)
    cells = [(r, c) for r in range(6) for c in range(6)]
    states = set()
    for _ in range(10_000):
        visited = frozenset(cells[i] for i in np.flatnonzero(rng.random(36) < 0.3))
        pos = cells[int(rng.integers(36))]
        states.add((pos, visited | {pos}))
    keys = {state_key(MazeState(p, v), StateKeying.POSITION_AND_VISITED) for p, v in states}
    assert len(keys) == len(states)


def test_reward_ranges_match_config(rng):
    env = MazeEnv.builtin("maze-multireward")
    spec = env.config.reward_spec
    R = _rollouts("maze-multireward", 300, rng)
    # each source is paid once per episode, so its discounted return is at most hi
    for colour, (src, lo, hi) in spec.items():
        assert R[:, src].max() <= hi + 1e-12


def test_transition_log_replays_identically():
    env = MazeEnv.builtin("maze-exclusive")
    pol = env.open_move_policy()

    def run(seed):
        rng = np.random.default_rng(seed)
        s, log = env.reset(), []
        for _ in range(200):
            s, r, term = env.step(s, pol.sample(env.key(s), rng), rng)
            log.append((env.key(s), r.tobytes(), term))
            if term:
                break
        return log

    assert run(3) == run(3)
