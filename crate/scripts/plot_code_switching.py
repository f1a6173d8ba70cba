"""Stacked bars of code-switching rates per model and language.

Usage: python scripts/plot_code_switching.py quist-out/codeswitch.csv out.png
"""

import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main(csv_path, png_path):
    counts = pd.read_csv(csv_path)
    table = counts.pivot_table(index=["language", "model"], columns="label", values="count", aggfunc="sum").fillna(0)
    for label in ("none", "interrogative", "full"):
        if label not in table:
            table[label] = 0
    pct = table.div(table.sum(axis=1), axis=0) * 100

    languages = list(pct.index.get_level_values("language").unique())
    fig, axes = plt.subplots(1, len(languages), figsize=(3 * len(languages) + 1, 3.5), sharey=True, squeeze=False)
    for ax, lang in zip(axes[0], languages):
        sub = pct.loc[lang]
        ax.bar(sub.index, sub["interrogative"], label="interrogative", color="tab:orange")
        ax.bar(sub.index, sub["full"], bottom=sub["interrogative"], label="full", color="tab:red")
        ax.set_title(lang)
        ax.tick_params(axis="x", rotation=45)
    axes[0][0].set_ylabel("% of questions code-switched")
    axes[0][-1].legend()
    fig.tight_layout()
    fig.savefig(png_path, dpi=150)


if __name__ == "__main__":
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    main(sys.argv[1], sys.argv[2])
