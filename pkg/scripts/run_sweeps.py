import sys
import os
import argparse
import logging
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

# Add current dir to path
sys.path.append(os.getcwd())
load_dotenv()

from app.core.config import settings
from app.core.logging import configure_logging
from app.schemas.simulation import SimConfig
from app.services.simulation_service import SimulationService

logger = logging.getLogger(__name__)


def run_sweeps(
    config_path: str,
    out_dir: str,
    cluster_std: Sequence[float],
    availability: Sequence[float],
    threads: Optional[int] = None,
) -> list[Path]:
    """Cluster-radius and availability sweeps; returns the CSV files written."""
    config = SimConfig.model_validate_json(Path(config_path).read_text())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    service = SimulationService(threads=threads)
    written = []

    if cluster_std:
        logger.info("Sweeping cluster_std_m over %s", list(cluster_std))
        table = service.sweep_cluster_std(config, cluster_std)
        path = out / "sweep_cluster_std.csv"
        table.to_csv(path, index=False)
        logger.info("cluster_std_m sweep written to %s\n%s", path, table.to_string(index=False))
        written.append(path)

    if availability:
        logger.info("Sweeping availability over %s", list(availability))
        table = service.sweep_availability(config, availability)
        path = out / "sweep_availability.csv"
        table.to_csv(path, index=False)
        logger.info("availability sweep written to %s\n%s", path, table.to_string(index=False))
        written.append(path)

    return written


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = argparse.ArgumentParser(description="Cluster-radius and link-intermittence sweeps")
    parser.add_argument("--config", default="configs/small_cell.json")
    parser.add_argument("--out", default=settings.output_dir)
    parser.add_argument("--cluster-std", type=float, nargs="*", default=[5.0, 10.0, 20.0, 40.0])
    parser.add_argument("--availability", type=float, nargs="*", default=[0.25, 0.5, 0.75, 1.0])
    parser.add_argument("--log-level", default=settings.log_level)
    parser.add_argument("--threads", type=int, default=None)
    args = parser.parse_args(argv)

    configure_logging(args.log_level)
    run_sweeps(args.config, args.out, args.cluster_std, args.availability, threads=args.threads)


if __name__ == "__main__":
    main()
