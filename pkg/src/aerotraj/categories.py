"""The object taxonomy used across detections, tracks, and trajectory files.

Fourteen classes; the parent map folds the fine-grained ones into the nine
coarse classes used for cross-dataset statistics.
"""

CLASS_NAMES = (
    "pedestrian",
    "bicycle",
    "car",
    "van",
    "truck",
    "trailer",
    "bus",
    "motorcycle",
    "scooter",
    "tram",
    "emergency_vehicle",
    "construction_vehicle",
    "animal",
    "other",
)

PARENT_CLASS = {
    "pedestrian": "pedestrian",
    "bicycle": "bicycle",
    "car": "car",
    "van": "car",
    "truck": "truck",
    "trailer": "truck",
    "bus": "bus",
    "motorcycle": "motorcycle",
    "scooter": "scooter",
    "tram": "other",
    "emergency_vehicle": "car",
    "construction_vehicle": "truck",
    "animal": "animal",
    "other": "other",
}

PARENT_NAMES = (
    "animal",
    "bicycle",
    "bus",
    "car",
    "motorcycle",
    "pedestrian",
    "scooter",
    "truck",
    "other",
)

# classes that can perform parking maneuvers / count as vehicles for mining
VEHICLE_CLASSES = frozenset(
    {"car", "van", "truck", "trailer", "bus", "emergency_vehicle", "construction_vehicle"}
)


def validate_category(name: str) -> str:
    if name not in CLASS_NAMES:
        raise ValueError(f"unknown object category {name!r}; expected one of {CLASS_NAMES}")
    return name
