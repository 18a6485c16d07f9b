#!/usr/bin/env python

from setuptools import setup, find_packages

setup(
    name='soda-rl',
    version='0.1.dev0',
    packages=find_packages(exclude=['tests', 'tests.*', 'examples', 'examples.*']),
    license='GPL3',
    python_requires='>=3.8',
    install_requires=[
        'click>=7.0',
        'click-log>=0.4.0',
        'terminaltables>=3.1.0',
        'numpy>=1.17,<2',
        ],
    extras_require={
        'test': ['pytest>=6.0'],
        },
    entry_points='''
        [console_scripts]
        soda=soda_rl.cli:cli
        ''',
    )
