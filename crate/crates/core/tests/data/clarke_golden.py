"""Regenerates clarke_golden.csv from the widely used Python Clarke grid
routine (zone rules copied verbatim, plotting removed)."""

import random


def zone(ref, pred):
    if (ref <= 70 and pred <= 70) or (pred <= 1.2 * ref and pred >= 0.8 * ref):
        return "A"
    elif (ref >= 180 and pred <= 70) or (ref <= 70 and pred >= 180):
        return "E"
    elif ((ref >= 70 and ref <= 290) and pred >= ref + 110) or (
        (ref >= 130 and ref <= 180) and (pred <= (7 / 5) * ref - 182)
    ):
        return "C"
    elif (
        (ref >= 240 and (pred >= 70 and pred <= 180))
        or (ref <= 175 / 3 and pred >= 70 and pred <= 180)
        or ((ref >= 175 / 3 and ref <= 70) and pred >= (6 / 5) * ref)
    ):
        return "D"
    else:
        return "B"


boundary = [
    (70, 70), (70, 71), (71, 70), (100, 120), (100, 80), (100, 79.9), (100, 120.1),
    (180, 70), (180, 71), (70, 180), (69, 180), (70, 179), (290, 400), (291, 401),
    (70, 180.5), (130, 10), (150, 28), (180, 70.5), (240, 70), (240, 180),
    (239, 100), (175 / 3, 70), (58, 180), (60, 72), (65, 78), (50, 100), (30, 40),
    (400, 250), (250, 150), (200, 60), (100, 110), (100, 250), (100, 140),
]
rng = random.Random(7)
points = list(boundary)
while len(points) < 50:
    points.append((round(rng.uniform(20, 420), 1), round(rng.uniform(20, 420), 1)))

with open("clarke_golden.csv", "w") as f:
    f.write("reference,prediction,zone\n")
    for r, p in points:
        f.write(f"{float(r)!r},{float(p)!r},{zone(r, p)}\n")
