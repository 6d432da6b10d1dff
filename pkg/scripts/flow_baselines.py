"""Flow-Th and Flow-Sal on the moving-square scene over a sweep of square sizes and shifts."""

import argparse

from fusionseg.evaluation import jaccard
from fusionseg.flowio import flow_saliency_segment, flow_threshold_segment
from fusionseg.synthetic import moving_square_flow


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=64)
    args = parser.parse_args()
    print("square  shift  flow-th  flow-sal")
    for square in (8, 16, 24, 32):
        for shift in (1.0, 5.0, 20.0):
            flow, gt = moving_square_flow(args.size, square, shift)
            th = jaccard(flow_threshold_segment(flow), gt)
            sal = jaccard(flow_saliency_segment(flow), gt)
            print(f"{square:6d}  {shift:5.1f}  {th:7.3f}  {sal:8.3f}")


if __name__ == "__main__":
    main()
