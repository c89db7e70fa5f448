from setuptools import setup, find_packages

with open("README.md", "r", encoding="utf-8") as fh:
    long_description = fh.read()

setup(
    install_requires=[
        "numpy>=1.24",
        "pandas>=2.0",
        "PyYAML>=6.0",
        "scikit-learn>=1.3",
        "torch>=2.1",
    ],
    extras_require={
        "dev": [
            "mock>=4.0",
            "pytest>=7.0",
            "scipy>=1.10",
        ],
    },
    name="py-timeline-gpt",
    version="0.1.0",
    author="Manuel Castellin",
    author_email="manuel@castellinconsulting.com",
    description="A desk-scale generative foundation model for patient timelines with artificial time tokens",
    long_description=long_description,
    long_description_content_type="text/markdown",
    url="https://github.com/mcastellin/py-timeline-gpt",
    project_urls={
        "Bug Tracker": "https://github.com/mcastellin/py-timeline-gpt/issues",
    },
    classifiers=[
        "Programming Language :: Python :: 3",
        "License :: OSI Approved :: MIT License",
        "Operating System :: OS Independent",
    ],
    package_dir={"": "src"},
    packages=find_packages(where="src"),
    python_requires=">=3.9",
    entry_points={
        "console_scripts": [
            "timelinegpt=timelinegpt.cli:main",
        ],
    },
)
