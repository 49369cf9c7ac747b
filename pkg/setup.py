#!/bin/env/python

from setuptools import setup

setup(
    name='pyMVCCL',
    version='0.1',
    description="'pyMVCCL'-Distribution: two-view classification with global consistency and local co-occurrence learning",
    author='Christoph Schueler',
    author_email='cpu12.gems@googlemail.com',
    url='http://www.github.com/Christoph2/pyMVCCL',
    packages=['pyMVCCL', 'pyMVCCL.scripts'],
    entry_points = {
	'console_scripts': [
		'mvccl = pyMVCCL.scripts.mvccl:main'
        ],
    },
    install_requires=[
	'numpy', 'scipy', 'Pillow'
    ],
    tests_require=[
	'hypothesis'
    ],
    test_suite = "tests"
)
