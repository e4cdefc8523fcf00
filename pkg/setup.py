#!/usr/bin/env python3
"""
Setup script for the biased tug-of-war toolkit

This script prepares a working directory for the toolkit and provides
convenient commands for common maintenance operations.
"""

import sys
import argparse
import subprocess
from pathlib import Path

# Add the src directory to the path for imports
sys.path.insert(0, str(Path(__file__).parent / "src"))

from src.btow.config import RunConfig
from src.btow.utils import cleanup_directories, ensure_directories, read_json_safe, setup_logging


def setup_system():
    """Set up the toolkit for first use."""
    print("Setting up the biased tug-of-war toolkit...")

    for package in ("numpy", "scipy"):
        try:
            module = __import__(package)
            print(f"✓ {package} {module.__version__}")
        except ImportError:
            print(f"❌ {package} is missing. Install with: pip install -r requirements.txt")
            return False

    # Create default configuration if it doesn't exist
    config_file = Path("config.json")
    if not config_file.exists():
        print("Creating default configuration...")
        RunConfig().save_to_file("config.json")
        print("✓ Created config.json")
    else:
        print("✓ Configuration file already exists")

    try:
        config = RunConfig.load_from_file("config.json")
    except ValueError as e:
        print(f"❌ {e}")
        return False
    errors = config.validate()
    if errors:
        print("❌ Configuration validation failed:")
        for error in errors:
            print(f"   - {error}")
        return False
    print("✓ Configuration is valid")

    if ensure_directories([config.output_dir]):
        print(f"✓ Output directory: {config.output_dir}")
    else:
        print(f"❌ Could not create {config.output_dir}")
        return False

    print("\n✅ Setup completed successfully!")
    print("\nNext steps:")
    print("1. Review and customize config.json if needed")
    print("2. Solve a game: python -m src.btow.cli solve --family interval --cells 64 --eps 0.015625")
    print("3. See every subcommand: python -m src.btow.cli --help")

    return True


def check_status():
    """Show the configuration and the artifacts already written."""
    print("Checking toolkit status...")

    try:
        config = RunConfig.load_from_file("config.json")

        print("\n📊 Configuration:")
        print(f"   Family: {config.family} (space file: {config.space})")
        print(f"   Bias: odds={config.odds}, beta={config.beta}, eps={config.eps}")
        print(f"   Solver: tol={config.tol}, max_sweeps={config.max_sweeps}, ball_rule={config.ball_rule}")

        output_dir = Path(config.output_dir)
        print("\n📁 Output Status:")
        if not output_dir.exists():
            print(f"   Output directory: {output_dir} (does not exist)")
            return True
        artifacts = sorted(p for p in output_dir.iterdir() if p.suffix in (".json", ".csv"))
        print(f"   Output directory: {output_dir}")
        print(f"   Artifacts: {len(artifacts)}")
        for artifact in artifacts[:10]:
            if artifact.suffix == ".json":
                data = read_json_safe(artifact, {})
                command = data.get("command", "?") if isinstance(data, dict) else "?"
                print(f"     - {artifact.name} ({command})")
            else:
                print(f"     - {artifact.name}")
        if len(artifacts) > 10:
            print(f"     ... and {len(artifacts) - 10} more")

    except Exception as e:
        print(f"❌ Error checking status: {e}")
        return False

    return True


def reset_system():
    """Remove the output directory (useful for testing)."""
    print("Resetting toolkit outputs...")

    try:
        config = RunConfig.load_from_file("config.json")
        if cleanup_directories([config.output_dir]):
            print(f"✓ Cleaned up: {config.output_dir}")
        else:
            print(f"❌ Failed to clean up {config.output_dir}")
            return False
        print("✅ Reset completed")

    except Exception as e:
        print(f"❌ Error resetting outputs: {e}")
        return False

    return True


def run_tests(include_slow: bool = False):
    """Run the test suite (slow statistical and refinement tests only on request)."""
    print("Running test suite...")

    command = [sys.executable, "-m", "pytest", "tests/", "-v"]
    if not include_slow:
        command += ["-m", "not slow"]
    try:
        result = subprocess.run(command, capture_output=True, text=True)

        print(result.stdout)
        if result.stderr:
            print("Errors:")
            print(result.stderr)

        if result.returncode == 0:
            print("✅ All tests passed")
            return True
        print("❌ Some tests failed")
        return False

    except Exception as e:
        print(f"❌ Error running tests: {e}")
        return False


def main():
    """Main setup script function."""
    parser = argparse.ArgumentParser(
        description="Setup and management script for the biased tug-of-war toolkit"
    )
    parser.add_argument(
        "command",
        choices=["setup", "status", "reset", "test"],
        help="Command to run"
    )
    parser.add_argument(
        "--slow",
        action="store_true",
        help="Include slow tests when running the test suite"
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default="INFO",
        help="Set the logging level"
    )

    args = parser.parse_args()

    setup_logging(args.log_level)

    if args.command == "setup":
        success = setup_system()
    elif args.command == "status":
        success = check_status()
    elif args.command == "reset":
        success = reset_system()
    else:
        success = run_tests(args.slow)

    return 0 if success else 1


if __name__ == "__main__":
    sys.exit(main())
