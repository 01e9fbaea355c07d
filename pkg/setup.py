#!/usr/bin/env python
from os.path import join

from setuptools import setup, find_packages


MODULE_NAME = 'egohome'
REPO_NAME = 'egohome'

VERSION = open(join(MODULE_NAME, 'VERSION')).read().strip()


with open('README.md') as f:
    readme = f.read()


setup(
    name=MODULE_NAME,
    description=('World-model planning for a household robot in a '
                 'procedurally generated, egocentrically rendered home'),
    license='MIT',
    long_description=readme,
    long_description_content_type='text/markdown',
    packages=find_packages(exclude=('tests', 'docs')),
    version=VERSION,
    install_requires=['cachetools>=4.2', 'matplotlib>=3.5', 'numpy>=1.22',
                      'pandas>=1.4', 'Pillow>=9.0', 'requests>=2.27',
                      'scipy>=1.9', 'torch>=1.13', 'Unidecode>=1.3',
                      'urllib3>=1.26'],
    entry_points={'console_scripts': ['egohome = egohome.cli:main']},
    classifiers=[
        'License :: OSI Approved :: MIT License',
        'Operating System :: OS Independent',
        'Programming Language :: Python :: 3',
        'Programming Language :: Python :: 3.8',
        'Programming Language :: Python :: 3 :: Only'
    ],
    include_package_data=True
)
