"""Evolutionary search over prompt instructions.

Population-based loop with mini-batch fitness, replay-buffer regularization,
momentum-smoothed scores, elitism, temperature-decayed mutation, and a
complexity-penalized final selection on a held-out validation set.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .scoring import TaskSample, complexity

# scorer(instruction_text, sample) -> real
Scorer = Callable[[str, TaskSample], float]
# mutator(parent_text, temperature, rng) -> new text
Mutator = Callable[[str, float, random.Random], str]
# sim(text_a, text_b) -> real in [-1, 1]
SimFn = Callable[[str, str], float]


class GenerationFailed(RuntimeError):
    pass


class DegeneratePopulation(RuntimeError):
    pass


@dataclass
class Instruction:
    id: str
    text: str
    smoothed_fitness: float = math.nan
    last_raw_fitness: float = math.nan
    lineage: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("instruction text must be non-empty")


@dataclass
class ReplayEntry:
    instruction_text: str
    recorded_fitness: float
    generation: int


@dataclass
class OptimizerConfig:
    population_size: int = 20
    elite_count: int = 10
    max_generations: int = 10
    tau_max: float = 0.7
    beta: float = 0.1  # procedure text value; the hyperparameter summary lists 0.3
    epsilon: float = 0.1
    alpha: float = 0.3
    lam: float = 0.01
    batch_base_fraction: float = 0.1
    delta_fitness: float = 0.005
    n_stable: int = 5
    d_min: float = 0.3
    replay_capacity: int = 10
    w_exec: float = 0.7
    w_log: float = 0.3
    w_cov: float = 0.6
    w_det: float = 0.4
    rng_seed: int = 0
    guided_mutation: bool = False

    def __post_init__(self) -> None:
        if self.elite_count >= self.population_size:
            raise ValueError("elite_count must be < population_size")
        for name in ("tau_max", "epsilon", "alpha", "batch_base_fraction"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must be in [0, 1]")


@dataclass
class GenerationStats:
    generation: int
    best_fitness: float
    mean_fitness: float
    diversity: float
    batch_size: int
    temperature: float

    def to_dict(self) -> dict:
        return {
            "generation": self.generation,
            "best_fitness": self.best_fitness,
            "mean_fitness": self.mean_fitness,
            "diversity": self.diversity,
            "batch_size": self.batch_size,
            "temperature": self.temperature,
        }


def minibatch_size(t: int, train_size: int, max_generations: int, base_fraction: float = 0.1) -> int:
    """Growing mini-batch: ceil(base * |train| * (1 + t/T))."""
    return math.ceil(base_fraction * train_size * (1 + t / max_generations))


def mutation_temperature(t: int, tau_max: float, beta: float) -> float:
    """Exponentially decayed sampling temperature for generation t."""
    return tau_max * math.exp(-beta * t)


def smooth_fitness(prev: float, raw: float, alpha: float) -> float:
    """Momentum-smoothed fitness: alpha * previous + (1 - alpha) * raw."""
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    return alpha * prev + (1 - alpha) * raw


def raw_fitness(
    text: str,
    batch: Sequence[TaskSample],
    replay: Sequence[ReplayEntry],
    epsilon: float,
    scorer: Scorer,
    sim: SimFn,
) -> float:
    """Mini-batch mean score plus the replay-similarity regularizer.

    The replay term is epsilon * mean(sim(rho, rho') * f') over the buffer and
    contributes nothing when the buffer is empty.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    batch_mean = sum(scorer(text, sample) for sample in batch) / len(batch)
    if not replay:
        return batch_mean
    replay_term = sum(sim(text, e.instruction_text) * e.recorded_fitness for e in replay) / len(replay)
    return batch_mean + epsilon * replay_term


def diversity(texts: Sequence[str], sim: SimFn) -> float:
    """1 - mean pairwise similarity over all unordered distinct pairs."""
    if len(texts) < 2:
        raise DegeneratePopulation("diversity needs at least two members")
    total = 0.0
    pairs = 0
    for i in range(len(texts)):
        for j in range(i + 1, len(texts)):
            total += sim(texts[i], texts[j])
            pairs += 1
    return 1.0 - total / pairs


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def init_population(
    seeds: Sequence[str],
    k: int,
    tau_max: float,
    mutator: Mutator,
    rng: random.Random,
    max_retries: int = 20,
) -> list[Instruction]:
    """Seed the population: the seeds themselves plus mutations, deduplicated
    by normalized text until k distinct instructions exist."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not seeds:
        raise ValueError("at least one seed is required")
    texts: list[str] = []
    seen: set[str] = set()
    for seed in seeds:
        norm = _normalize(seed)
        if norm not in seen and len(texts) < k:
            seen.add(norm)
            texts.append(seed)
    attempts = 0
    while len(texts) < k:
        parent = texts[rng.randrange(len(texts))]
        candidate = mutator(parent, tau_max, rng)
        norm = _normalize(candidate)
        if candidate and norm not in seen:
            seen.add(norm)
            texts.append(candidate)
            attempts = 0
        else:
            attempts += 1
            if attempts > max_retries:
                raise GenerationFailed(
                    f"could not generate {k} distinct instructions ({len(texts)} so far)"
                )
    return [Instruction(id=f"i{n:04d}", text=t) for n, t in enumerate(texts)]


def mutate(
    parent: Instruction,
    tau: float,
    batch: Sequence[TaskSample],
    mutator: Mutator,
    rng: random.Random,
    child_id: str,
    guided: bool = False,
    scorer: Optional[Scorer] = None,
) -> Instruction:
    """Produce one offspring; in guided mode the better of two candidates on
    the current batch is kept.  The child inherits the parent's smoothed
    fitness as its starting value."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    text = mutator(parent.text, tau, rng)
    if not text:
        raise GenerationFailed("mutator returned empty text")
    if guided and scorer is not None and batch:
        alt = mutator(parent.text, tau, rng)
        if alt and alt != text:
            score_a = sum(scorer(text, s) for s in batch) / len(batch)
            score_b = sum(scorer(alt, s) for s in batch) / len(batch)
            if score_b > score_a:
                text = alt
    return Instruction(
        id=child_id,
        text=text,
        smoothed_fitness=parent.smoothed_fitness,
        lineage=parent.id,
    )


def _update_replay(
    buffer: list[ReplayEntry],
    population: Sequence[Instruction],
    capacity: int,
    generation: int,
) -> list[ReplayEntry]:
    # Merge by text, keep the best recorded fitness, cap to capacity, sorted desc.
    best: dict[str, ReplayEntry] = {e.instruction_text: e for e in buffer}
    top = sorted(population, key=lambda i: (-i.smoothed_fitness, i.id))[:capacity]
    for inst in top:
        existing = best.get(inst.text)
        if existing is None or inst.smoothed_fitness > existing.recorded_fitness:
            best[inst.text] = ReplayEntry(inst.text, inst.smoothed_fitness, generation)
    merged = sorted(best.values(), key=lambda e: -e.recorded_fitness)
    return merged[:capacity]


def evolve(
    train: Sequence[TaskSample],
    cfg: OptimizerConfig,
    scorer: Scorer,
    mutator: Mutator,
    sim: SimFn,
    seeds: Optional[Sequence[str]] = None,
    population: Optional[list[Instruction]] = None,
    on_generation: Optional[Callable[[int, list[Instruction], GenerationStats], None]] = None,
) -> tuple[list[Instruction], list[GenerationStats]]:
    """Run the evolutionary loop and return the final population and the
    per-generation history."""
    if not train:
        raise ValueError("training set must be non-empty")
    rng = random.Random(cfg.rng_seed)
    if population is None:
        if not seeds:
            raise ValueError("either seeds or an initial population is required")
        population = init_population(seeds, cfg.population_size, cfg.tau_max, mutator, rng)
    next_id = len(population)
    replay: list[ReplayEntry] = []
    history: list[GenerationStats] = []

    # Initial fitness over a base-fraction batch; the replay buffer starts empty.
    init_size = min(len(train), math.ceil(cfg.batch_base_fraction * len(train)))
    init_batch = rng.sample(list(train), init_size)
    for inst in population:
        inst.last_raw_fitness = raw_fitness(inst.text, init_batch, replay, cfg.epsilon, scorer, sim)
        inst.smoothed_fitness = inst.last_raw_fitness

    prev_best = max(i.smoothed_fitness for i in population)
    stable = 0
    t = 1
    while t <= cfg.max_generations and stable < cfg.n_stable:
        n_t = min(len(train), minibatch_size(t, len(train), cfg.max_generations, cfg.batch_base_fraction))
        batch = rng.sample(list(train), n_t)

        for inst in population:
            inst.last_raw_fitness = raw_fitness(inst.text, batch, replay, cfg.epsilon, scorer, sim)
            inst.smoothed_fitness = smooth_fitness(
                inst.smoothed_fitness, inst.last_raw_fitness, cfg.alpha
            )

        elites = sorted(population, key=lambda i: (-i.smoothed_fitness, i.id))[: cfg.elite_count]
        tau_t = mutation_temperature(t, cfg.tau_max, cfg.beta)
        offspring: list[Instruction] = []
        for _ in range(cfg.population_size - cfg.elite_count):
            parent = elites[rng.randrange(len(elites))]
            child = mutate(
                parent,
                tau_t,
                batch,
                mutator,
                rng,
                child_id=f"i{next_id:04d}",
                guided=cfg.guided_mutation,
                scorer=scorer,
            )
            next_id += 1
            offspring.append(child)
        population = elites + offspring

        replay = _update_replay(replay, population, cfg.replay_capacity, t)

        best = max(i.smoothed_fitness for i in population)
        mean = sum(i.smoothed_fitness for i in population) / len(population)
        if t > 1 and abs(best - prev_best) < cfg.delta_fitness:
            stable += 1
        else:
            stable = 0
        d_t = diversity([i.text for i in population], sim)
        stats = GenerationStats(
            generation=t,
            best_fitness=best,
            mean_fitness=mean,
            diversity=d_t,
            batch_size=n_t,
            temperature=tau_t,
        )
        history.append(stats)
        if on_generation is not None:
            on_generation(t, population, stats)
        prev_best = best
        if d_t < cfg.d_min:
            break
        t += 1
    return population, history


def final_select(
    population: Sequence[Instruction],
    val: Sequence[TaskSample],
    lam: float,
    scorer: Scorer,
) -> Instruction:
    """Pick the instruction maximizing validation mean minus a complexity
    penalty; ties break toward lower complexity, then id."""
    if not val:
        raise ValueError("validation set must be non-empty")
    best: Optional[Instruction] = None
    best_key: Optional[tuple[float, float, str]] = None
    for inst in population:
        val_mean = sum(scorer(inst.text, s) for s in val) / len(val)
        score = val_mean - lam * complexity(inst.text)
        key = (-score, complexity(inst.text), inst.id)
        if best_key is None or key < best_key:
            best_key = key
            best = inst
    assert best is not None
    return best
