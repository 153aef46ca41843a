"""Convert a LINQS citation dataset (e.g. cora.content / cora.cites) to a dataset directory.

    python tools/linqs_to_dataset.py cora/cora.content cora/cora.cites data/cora
"""

import argparse

from snowflake_gnn.datasets import convert_linqs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("content")
    ap.add_argument("cites")
    ap.add_argument("out_dir")
    ap.add_argument("--name", default="cora")
    args = ap.parse_args()
    bundle = convert_linqs(args.content, args.cites, args.out_dir, args.name)
    g = bundle.graph
    print(f"{g.num_nodes} nodes, {g.num_edges // 2} undirected edges, {g.num_features} features, "
          f"{bundle.num_classes} classes; {bundle.warnings}")


if __name__ == "__main__":
    main()
