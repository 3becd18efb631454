"""
Setup configuration for hydrosplit.

Installs the ``hydrosplit`` library and its command-line driver.
"""

import os

from setuptools import find_packages, setup

HERE = os.path.dirname(os.path.abspath(__file__))

TEST_REQUIRES = [
    "pytest>=7.0.0",
    "pytest-cov>=4.0.0",
    "pytest-mock>=3.8.0",
]


def read_requirements(name="requirements.txt"):
    """Runtime requirements, one per line; comments and ``-r`` includes skipped."""
    path = os.path.join(HERE, name)
    if not os.path.exists(path):
        return []
    with open(path, "r", encoding="utf-8") as f:
        return [
            line.strip()
            for line in f
            if line.strip() and not line.startswith(("#", "-r"))
        ]


def get_version():
    """``__version__`` from hydrosplit/__init__.py without importing numpy."""
    with open(os.path.join(HERE, "hydrosplit", "__init__.py"), "r", encoding="utf-8") as f:
        for line in f:
            if line.startswith("__version__"):
                return line.split('"')[1]
    raise RuntimeError("hydrosplit/__init__.py defines no __version__")


setup(
    name="hydrosplit",
    version=get_version(),
    description=(
        "Viscosity-splitting finite elements for the hydrostatic Primitive Equations "
        "on extruded tetrahedral column meshes"
    ),
    license="MIT",
    packages=find_packages(exclude=["tests*", "examples*"]),
    package_data={"hydrosplit": ["py.typed"]},
    python_requires=">=3.9",
    install_requires=read_requirements(),
    extras_require={
        "test": TEST_REQUIRES,
        "dev": TEST_REQUIRES + ["black>=22.0.0", "flake8>=5.0.0", "isort>=5.10.0", "mypy>=0.991"],
    },
    entry_points={"console_scripts": ["hydrosplit=hydrosplit.cli:main"]},
    classifiers=[
        "Development Status :: 4 - Beta",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Mathematics",
        "Topic :: Scientific/Engineering :: Physics",
        "Typing :: Typed",
    ],
    keywords=["finite elements", "primitive equations", "ocean modelling", "fractional step", "taylor-hood"],
    zip_safe=False,
)
