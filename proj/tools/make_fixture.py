#!/usr/bin/env python3
"""Generate the bundled 50-user x 200-item ratings fixture.

Output uses the MovieLens-1M file layout (ratings.dat and movies.dat with
"::" separators). Ratings follow per-user genre affinities, so the data has
learnable structure. The generator is seeded; rerunning reproduces the files
byte for byte.
"""

import argparse
import pathlib
import random

GENRES = ["Action", "Comedy", "Drama", "Thriller", "Romance",
          "Sci-Fi", "Horror", "Adventure", "Children's", "Documentary"]


def generate(out_dir: pathlib.Path, users: int, items: int, seed: int) -> None:
    rng = random.Random(seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    movie_ids = [1 + 3 * i for i in range(items)]
    movie_genre = [rng.randrange(len(GENRES)) for _ in range(items)]
    with open(out_dir / "movies.dat", "w", encoding="utf-8", newline="\n") as f:
        for mid, g in zip(movie_ids, movie_genre):
            extra = GENRES[(g + 1 + rng.randrange(len(GENRES) - 1)) % len(GENRES)]
            genres = GENRES[g] if rng.random() < 0.6 else f"{GENRES[g]}|{extra}"
            f.write(f"{mid}::Fixture Movie {mid} (2000)::{genres}\n")

    lines = []
    stamp = 978300000
    for u in range(1, users + 1):
        liked = rng.sample(range(len(GENRES)), 3)
        disliked = rng.sample([g for g in range(len(GENRES)) if g not in liked], 3)
        quality = [rng.gauss(0.0, 0.5) for _ in range(items)]
        for i, (mid, g) in enumerate(zip(movie_ids, movie_genre)):
            affinity = 1.0 if g in liked else (-1.0 if g in disliked else 0.0)
            watch = 0.65 if affinity > 0 else (0.3 if affinity < 0 else 0.42)
            if rng.random() >= watch:
                continue
            value = 3.0 + 1.4 * affinity + quality[i] + rng.gauss(0.0, 0.6)
            rating = min(5, max(1, round(value)))
            stamp += rng.randrange(1, 400)
            lines.append(f"{u}::{mid}::{rating}::{stamp}\n")

    with open(out_dir / "ratings.dat", "w", encoding="utf-8", newline="\n") as f:
        f.writelines(lines)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=pathlib.Path,
                        default=pathlib.Path(__file__).resolve().parent.parent / "data" / "ml1m_fixture")
    parser.add_argument("--users", type=int, default=50)
    parser.add_argument("--items", type=int, default=200)
    parser.add_argument("--seed", type=int, default=20240501)
    args = parser.parse_args()
    generate(args.out, args.users, args.items, args.seed)


if __name__ == "__main__":
    main()
