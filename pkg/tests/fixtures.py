"""Hand-built evaluation fixtures shared by several test modules."""

VARIABLEN_MT = ("Die folgende Funktion enthält zum Beispiel Variable , die "
             "in verschiedenen Codebereichen definiert sind .")
VARIABLEN_REF = ("Die folgende Funktion enthält zum Beispiel Variablen , die "
              "in verschiedenen Codebereichen definiert sind .")
ZOOM_HYP = "Doppelklicken Sie auf das Zoom-Werkzeug ."
ZOOM_REF = "Doppelklicken Sie auf das Zoomwerkzeug ."

R6 = "a b c d e f"

# (mt, ape, reference, expected category)
TAXONOMY = [
    (R6, "a b c d e x", R6, "RUIN"),
    (R6, R6, R6, "ACCE"),
    ("g h i j", "g h i j", "g h i j", "ACCE"),
    ("a b c d e x", "a b c d e x", R6, "NEGL"),
    ("a b c d x f", R6, R6, "PERF"),
    ("a b c y x f", R6, R6, "PERF"),
    ("a b y x e f", "a b c x e f", R6, "IMPR"),
    ("x y z d e f", "a y z d e f", R6, "IMPR"),
    ("a b c d e x", "x b c d e f", R6, "EVEN"),
    ("a b c d e x", "a x c d y z", R6, "DEGR"),
]

# hand counts over the ten sentences
TAXONOMY_COUNTS = {"RUIN": 1, "DEGR": 1, "EVEN": 1, "IMPR": 2, "PERF": 2, "ACCE": 2, "NEGL": 1}
# MT imperfect on rows 4-10, edited on rows 1 and 5-10: TP 6, FP 1, FN 1
TAXONOMY_F1 = 6 / 7
