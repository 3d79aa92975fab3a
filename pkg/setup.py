#!/usr/bin/python

try:
    from setuptools import setup
except ImportError:
    from distutils.core import setup

config = {
    'name': 'slkd',
    'version': '0.1.0',
    'description': 'Snapshot-driven curriculum knowledge distillation experiments',
    'packages': ['slkd'],
    'python_requires': '>=3.8',
    'install_requires': [
        'numpy>=1.20',
        'scipy',
        'scikit-learn>=0.22',
        'matplotlib>=3.1',
        'PyYAML',
        'tqdm'
    ],
    'entry_points': {
        'console_scripts': ['slkd=slkd.__main__:main']
    }
}

setup(**config)
