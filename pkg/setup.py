#!/usr/bin/env python3
"""
Setup Script for sybilscope

    python setup.py            # bootstrap: dependencies, .env, smoke test
    python setup.py install    # any setuptools command is passed through
"""

import os
import subprocess
import sys

MODULES = ["churn", "cli", "config", "dirdata", "document_storage", "errors",
           "fingerprints", "models", "neighbors", "plots", "synth", "uptime"]

ENV_TEMPLATE = """# sybilscope configuration
# Log level: DEBUG, INFO, WARNING, ERROR
SYBILSCOPE_LOG=WARNING

# Optional: worker threads for parsing and neighbor search
# SYBILSCOPE_WORKERS=8
"""


def install_dependencies():
    if sys.version_info < (3, 9):
        print("❌ Python 3.9+ required. Current version:", sys.version)
        return False
    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"])
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Failed to install dependencies: {e}")
        return False


def create_env_file():
    if not os.path.exists(".env"):
        with open(".env", "w") as f:
            f.write(ENV_TEMPLATE)
        print("✅ Created .env file template")
    return True


def run_smoke_test():
    """Generate two hours, round-trip the first consensus through the parser"""
    try:
        from config import Config
        from dirdata import parse_consensus, serialize_consensus
        from models import BaselineSpec
        from synth import generate
        Config.validate()
        stream = generate(BaselineSpec(relay_count=5, duration_hours=2))
        text = serialize_consensus(stream.consensuses[0])
        if serialize_consensus(parse_consensus(text)) != text:
            raise ValueError("consensus round trip differs")
        return True
    except Exception as e:
        print(f"❌ Smoke test failed: {e}")
        return False


def bootstrap():
    print("🚀 **sybilscope Setup**")
    steps = [
        ("Dependencies", install_dependencies),
        ("Environment file", create_env_file),
        ("Smoke test", run_smoke_test),
    ]
    failed = [name for name, step in steps if not step()]
    if failed:
        print(f"⚠️  Setup had issues: {', '.join(failed)}")
        return
    print("🎉 Setup completed successfully!")
    print("Next: python cli.py synth --spec settings/synth_example.yaml --out data/synthetic")


def package():
    from setuptools import setup

    with open("requirements.txt", encoding="utf-8") as f:
        requirements = [line.split("#")[0].strip() for line in f
                        if line.split("#")[0].strip() and not line.startswith("pytest")]
    setup(
        name="sybilscope",
        version="0.1.0",
        description="Sybil relay detection for Tor directory archives",
        py_modules=MODULES,
        packages=["settings"],
        package_data={"settings": ["*.yaml", "README.md"]},
        install_requires=requirements,
        python_requires=">=3.9",
        entry_points={"console_scripts": ["sybilscope=cli:main"]},
    )


if __name__ == "__main__":
    if len(sys.argv) > 1:
        package()
    else:
        bootstrap()
