#!/usr/bin/env python3
"""
Setup script for the transducer toolkit
"""

import sys
import subprocess
import os
from pathlib import Path

def check_python_version():
    """Check if Python version is compatible"""
    if sys.version_info < (3, 9):
        print("Error: Python 3.9 or higher is required")
        print(f"   Current version: {sys.version}")
        print("   Please upgrade Python and try again")
        return False

    print(f"Python {sys.version.split()[0]} detected")
    return True

def install_requirements():
    """Install required packages"""
    print("\nInstalling required packages...")

    try:
        subprocess.check_call([
            sys.executable, "-m", "pip", "install", "-r", "requirements.txt"
        ])
        print("All packages installed successfully")
        return True
    except subprocess.CalledProcessError as e:
        print(f"Error installing packages: {e}")
        print("   Try running: pip install -r requirements.txt")
        return False

def verify_installation():
    """Verify that all required packages are installed"""
    print("\nVerifying installation...")

    required_packages = [
        "numpy",
        "scipy",
        "pandas",
        "pydantic",
        "jinja2",
        "dotenv",
        "pytest",
    ]

    failed_imports = []

    for package in required_packages:
        try:
            __import__(package)
            print(f"  {package}")
        except ImportError:
            print(f"  {package} (missing)")
            failed_imports.append(package)

    if failed_imports:
        print(f"\nFailed to import: {', '.join(failed_imports)}")
        print("   Try reinstalling with: pip install -r requirements.txt --force-reinstall")
        return False

    print("All packages verified successfully")
    return True

def check_experiment_configs():
    """Check that the bundled experiment configs exist"""
    print("\nChecking experiment configs...")

    config_files = [
        "config/experiment_defaults.json",
        "config/smoke_experiment.json",
    ]

    all_exist = True
    for file_path in config_files:
        if Path(file_path).exists():
            print(f"  {file_path}")
        else:
            print(f"  {file_path} (missing)")
            all_exist = False

    return all_exist

def create_smoke_script():
    """Create a script that runs the smoke pipeline end to end"""
    print("\nCreating smoke script...")

    steps = [
        "python transducer_cli.py gen-data --config config/smoke_experiment.json --seed 7 --out-dir runs/smoke/data",
        "python transducer_cli.py train-lm --config config/smoke_experiment.json --data-dir runs/smoke/data --out-dir runs/smoke",
    ]
    for kind in ("ctc", "rnnt", "attention"):
        steps.append(
            f"python transducer_cli.py train --config config/smoke_experiment.json --kind {kind} "
            f"--data-dir runs/smoke/data --out-dir runs/smoke"
        )
    steps.append(
        "python transducer_cli.py ablate --config config/smoke_experiment.json "
        "--models runs/smoke/ctc.model runs/smoke/rnnt.model runs/smoke/attention.model "
        "--lm runs/smoke/lm.txt --data-dir runs/smoke/data --out-dir runs/smoke"
    )

    if os.name == 'nt':  # Windows
        script_content = "@echo off\n" + "\n".join(steps) + "\n"
        script_name = "run_smoke.bat"
    else:  # Unix-like
        script_content = "#!/bin/bash\nset -e\n" + "\n".join(steps) + "\n"
        script_name = "run_smoke.sh"

    try:
        with open(script_name, 'w') as f:
            f.write(script_content)

        if os.name != 'nt':  # Make executable on Unix-like systems
            os.chmod(script_name, 0o755)

        print(f"Created {script_name}")
        return True
    except OSError as e:
        print(f"Error creating smoke script: {e}")
        return False

def main():
    """Main setup function"""
    print("Transducer toolkit setup")
    print("=" * 50)

    if not check_python_version():
        sys.exit(1)

    if not install_requirements():
        print("\nInstallation completed with errors")
        print("   You may need to install packages manually")

    if not verify_installation():
        print("\nSetup failed - some packages could not be imported")
        sys.exit(1)

    check_experiment_configs()
    create_smoke_script()

    print("\n" + "=" * 50)
    print("Setup completed successfully!")
    print("\nTo run the smoke experiment:")
    if os.name == 'nt':
        print("  run_smoke.bat")
    else:
        print("  ./run_smoke.sh")
    print("\nTo run the tests:")
    print("  pytest tests")
    print("\nFor help and documentation:")
    print("  - docs/USER_GUIDE.md")
    print("  - docs/CONFIGURATION.md")
    print("  - docs/DEVELOPER_GUIDE.md")

if __name__ == "__main__":
    main()
